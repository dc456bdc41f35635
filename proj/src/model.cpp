#include "metaemb/model.hpp"

#include <algorithm>
#include <cmath>

#include "metaemb/errors.hpp"
#include "metaemb/ops.hpp"
#include "metaemb/random.hpp"

namespace metaemb {

using ad::Var;

std::string_view to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::fm: return "FM";
    case ModelVariant::wide_deep: return "WideDeep";
    case ModelVariant::ipnn: return "IPNN";
    case ModelVariant::opnn: return "OPNN";
    case ModelVariant::pnn_star: return "PNNstar";
    case ModelVariant::deepfm: return "DeepFM";
  }
  return "?";
}

ModelVariant parse_variant(std::string_view s) {
  for (auto v : all_variants()) {
    if (to_string(v) == s) return v;
  }
  if (s == "PNN*") return ModelVariant::pnn_star;
  if (s == "Wide&Deep") return ModelVariant::wide_deep;
  throw ValidationError("unknown model variant '" + std::string(s) + "'");
}

const std::array<ModelVariant, 6>& all_variants() {
  static const std::array<ModelVariant, 6> kAll = {ModelVariant::fm,   ModelVariant::wide_deep,
                                                   ModelVariant::ipnn, ModelVariant::opnn,
                                                   ModelVariant::pnn_star, ModelVariant::deepfm};
  return kAll;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows) {
  const Schema& schema = data.schema();
  Batch b;
  b.rows.assign(rows.begin(), rows.end());
  b.labels = Tensor(Shape{std::max<std::size_t>(rows.size(), 1), 1});
  if (rows.empty()) throw ValidationError("make_batch: empty batch");
  b.ad_ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= data.size()) throw IndexError("make_batch: row " + std::to_string(rows[i]) + " out of range");
    b.ad_ids.push_back(data.ad_id(rows[i]));
    b.labels[i] = data.label(rows[i]);
  }
  std::vector<std::vector<std::uint32_t>> bags(rows.size());
  for (std::size_t f = 0; f < schema.size(); ++f) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto vals = data.values(rows[i], f);
      bags[i].assign(vals.begin(), vals.end());
    }
    const std::size_t vocab = schema.field(f).vocab_size;
    b.pooled.push_back(std::make_shared<const SparseMatrix>(SparseMatrix::mean_pool(bags, vocab)));
    if (schema.field(f).kind == FieldKind::token_list) {
      for (auto& bag : bags) {
        std::sort(bag.begin(), bag.end());
        bag.erase(std::unique(bag.begin(), bag.end()), bag.end());
      }
      SparseMatrix s = SparseMatrix::mean_pool(bags, vocab);
      std::fill(s.weights.begin(), s.weights.end(), 1.0);
      b.presence.push_back(std::make_shared<const SparseMatrix>(std::move(s)));
    } else {
      b.presence.push_back(b.pooled.back());
    }
  }
  return b;
}

BaseModel::BaseModel(ModelConfig config, Schema schema) : config_(std::move(config)), schema_(std::move(schema)) {}

std::size_t BaseModel::add_param(std::string name, Tensor value) {
  params_.push_back(Parameter{std::move(name), std::move(value), true});
  return params_.size() - 1;
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(Shape{fan_in, fan_out});
  for (double& v : t.values()) v = uniform(rng, -limit, limit);
  return t;
}

bool is_deep(ModelVariant v) { return v != ModelVariant::fm; }
bool has_inner(ModelVariant v) { return v == ModelVariant::ipnn || v == ModelVariant::pnn_star; }
bool has_outer(ModelVariant v) { return v == ModelVariant::opnn || v == ModelVariant::pnn_star; }
bool has_fm(ModelVariant v) { return v == ModelVariant::fm || v == ModelVariant::deepfm; }

}  // namespace

BaseModel BaseModel::build(const ModelConfig& config, const Schema& schema) {
  if (config.embedding_dim < 2) throw ValidationError("build_model: embedding dimension must be at least 2");
  if (is_deep(config.variant) && config.hidden_dims.empty()) {
    throw ValidationError("build_model: " + std::string(to_string(config.variant)) + " needs hidden layers");
  }
  if (!(config.init_stddev >= 0.0)) throw ValidationError("build_model: negative init stddev");
  for (auto h : config.hidden_dims) {
    if (h == 0) throw ValidationError("build_model: hidden width must be positive");
  }
  if (schema.size() == 0) throw ValidationError("build_model: empty schema");

  BaseModel m(config, schema);
  Rng rng(derive_seed(config.seed, "model-init"));
  const std::size_t dim = config.embedding_dim;
  const std::size_t fields = schema.size();

  for (std::size_t f = 0; f < fields; ++f) {
    Tensor t(Shape{schema.field(f).vocab_size, dim});
    for (std::size_t r = 1; r < t.rows(); ++r) {
      for (double& v : t.row(r)) v = normal(rng, 0.0, config.init_stddev);
    }
    m.add_param("emb/" + schema.field(f).name, std::move(t));
  }
  m.add_param("bias", Tensor(Shape{1, 1}));

  const ModelVariant v = config.variant;
  if (has_fm(v)) m.add_param("fm/linear", glorot(fields * dim, 1, rng));
  if (v == ModelVariant::wide_deep) {
    for (std::size_t f = 0; f < fields; ++f) {
      if (f == schema.ad_id_field()) continue;
      m.add_param("wide/" + schema.field(f).name, Tensor(Shape{schema.field(f).vocab_size, 1}));
    }
  }
  if (is_deep(v)) {
    std::size_t width = fields * dim;
    if (has_inner(v)) width += fields * (fields - 1) / 2;
    if (has_outer(v)) width += dim * dim;
    for (std::size_t i = 0; i < config.hidden_dims.size(); ++i) {
      const std::size_t h = config.hidden_dims[i];
      m.add_param("mlp/W" + std::to_string(i), glorot(width, h, rng));
      m.add_param("mlp/b" + std::to_string(i), Tensor(Shape{1, h}));
      width = h;
    }
    if (v == ModelVariant::deepfm) width += 1;
    m.add_param("out/W", glorot(width, 1, rng));
  }
  m.index_parameters();
  return m;
}

void BaseModel::index_parameters() {
  auto find = [&](const std::string& name) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name == name) return i;
    }
    throw ValidationError("model is missing parameter '" + name + "'");
  };
  table_index_.clear();
  wide_index_.assign(schema_.size(), 0);
  hidden_w_.clear();
  hidden_b_.clear();
  for (std::size_t f = 0; f < schema_.size(); ++f) table_index_.push_back(find("emb/" + schema_.field(f).name));
  bias_ = find("bias");
  const ModelVariant v = config_.variant;
  if (has_fm(v)) fm_linear_ = find("fm/linear");
  if (v == ModelVariant::wide_deep) {
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      if (f != schema_.ad_id_field()) wide_index_[f] = find("wide/" + schema_.field(f).name);
    }
  }
  if (is_deep(v)) {
    for (std::size_t i = 0; i < config_.hidden_dims.size(); ++i) {
      hidden_w_.push_back(find("mlp/W" + std::to_string(i)));
      hidden_b_.push_back(find("mlp/b" + std::to_string(i)));
    }
    out_ = find("out/W");
  }
}

BaseModel BaseModel::from_parts(const ModelConfig& config, const Schema& schema, std::vector<Parameter> params) {
  BaseModel m = build(config, schema);
  if (params.size() != m.params_.size()) throw ValidationError("model parameters do not match the configuration");
  for (auto& p : params) {
    Parameter& dst = m.parameter(p.name);
    if (dst.value.shape() != p.value.shape()) {
      throw ShapeError("parameter '" + p.name + "' has shape " + shape_string(p.value.shape()) + ", expected " +
                       shape_string(dst.value.shape()));
    }
    dst.value = std::move(p.value);
    dst.trainable = p.trainable;
  }
  return m;
}

Parameter& BaseModel::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ValidationError("no parameter named '" + std::string(name) + "'");
}

const Parameter& BaseModel::parameter(std::string_view name) const {
  return const_cast<BaseModel*>(this)->parameter(name);
}

BaseModel::Bound BaseModel::bind(ad::Tape& tape) const {
  Bound b;
  b.params.reserve(params_.size());
  for (const auto& p : params_) b.params.push_back(tape.leaf_ref(p.value));
  return b;
}

std::vector<Var> BaseModel::embed(const Bound& bound, const Batch& batch, bool include_id) const {
  if (batch.pooled.size() != schema_.size()) throw ValidationError("embed: batch built for a different schema");
  std::vector<Var> out(schema_.size());
  for (std::size_t f = 0; f < schema_.size(); ++f) {
    if (!include_id && f == schema_.ad_id_field()) continue;
    out[f] = ad::sparse_matmul(batch.pooled[f], bound.params[table_index_[f]]);
  }
  return out;
}

Var BaseModel::mlp(const Bound& bound, Var x) const {
  const std::size_t rows = x.value().rows();
  for (std::size_t i = 0; i < hidden_w_.size(); ++i) {
    Var pre = ad::matmul(x, bound.params[hidden_w_[i]]);
    x = ad::relu(ad::add(pre, ad::broadcast_rows(bound.params[hidden_b_[i]], rows)));
  }
  return x;
}

// First-order term over the concatenated embeddings plus the pairwise inner
// products sum_{i<j} <e_i, e_j> = 0.5 * sum_d [(sum_i e_i)^2 - sum_i e_i^2].
Var BaseModel::fm_terms(const Bound& bound, std::span<const Var> fields, Var concat) const {
  Var linear = ad::matmul(concat, bound.params[fm_linear_]);
  Var total = fields[0];
  Var squares = ad::square(fields[0]);
  for (std::size_t f = 1; f < fields.size(); ++f) {
    total = ad::add(total, fields[f]);
    squares = ad::add(squares, ad::square(fields[f]));
  }
  Var pairs = ad::scale(ad::sum_cols(ad::sub(ad::square(total), squares)), 0.5);
  return ad::add(linear, pairs);
}

Var BaseModel::predict(const Bound& bound, const Batch& batch, std::span<const Var> fields) const {
  if (fields.size() != schema_.size()) throw ValidationError("predict: wrong number of field embeddings");
  const std::size_t rows = batch.size();
  const std::size_t dim = config_.embedding_dim;
  for (std::size_t f = 0; f < fields.size(); ++f) {
    if (!fields[f].valid()) throw ValidationError("predict: missing embedding for field " + schema_.field(f).name);
    if (fields[f].shape() != Shape{rows, dim}) {
      throw ShapeError("predict: field '" + schema_.field(f).name + "' embedding " + shape_string(fields[f].shape()) +
                       ", expected " + shape_string(Shape{rows, dim}));
    }
  }
  Var concat = ad::concat_cols(fields);
  Var logit;
  const ModelVariant v = config_.variant;
  switch (v) {
    case ModelVariant::fm:
      logit = fm_terms(bound, fields, concat);
      break;
    case ModelVariant::wide_deep: {
      logit = ad::matmul(mlp(bound, concat), bound.params[out_]);
      for (std::size_t f = 0; f < schema_.size(); ++f) {
        if (f == schema_.ad_id_field()) continue;
        logit = ad::add(logit, ad::sparse_matmul(batch.presence[f], bound.params[wide_index_[f]]));
      }
      break;
    }
    case ModelVariant::ipnn:
    case ModelVariant::opnn:
    case ModelVariant::pnn_star: {
      std::vector<Var> parts{concat};
      if (has_inner(v)) {
        std::vector<Var> inner;
        for (std::size_t i = 0; i < fields.size(); ++i)
          for (std::size_t j = i + 1; j < fields.size(); ++j) inner.push_back(ad::sum_cols(ad::mul(fields[i], fields[j])));
        parts.push_back(ad::concat_cols(inner));
      }
      if (has_outer(v)) {
        // Outer product of the summed field embeddings, flattened row-major.
        Var total = fields[0];
        for (std::size_t f = 1; f < fields.size(); ++f) total = ad::add(total, fields[f]);
        std::vector<std::uint32_t> rep(dim * dim), tile(dim * dim);
        for (std::uint32_t i = 0; i < dim; ++i) {
          for (std::uint32_t j = 0; j < dim; ++j) {
            rep[i * dim + j] = i;
            tile[i * dim + j] = j;
          }
        }
        parts.push_back(ad::mul(ad::select_cols(total, std::move(rep)), ad::select_cols(total, std::move(tile))));
      }
      logit = ad::matmul(mlp(bound, ad::concat_cols(parts)), bound.params[out_]);
      break;
    }
    case ModelVariant::deepfm: {
      const Var head[] = {fm_terms(bound, fields, concat), mlp(bound, concat)};
      logit = ad::matmul(ad::concat_cols(head), bound.params[out_]);
      break;
    }
  }
  logit = ad::add(logit, ad::broadcast_rows(bound.params[bias_], rows));
  return ad::sigmoid(logit);
}

std::vector<double> BaseModel::predict_values(const Batch& batch, const Tensor* id_table) const {
  ad::Tape tape;
  Bound bound = bind(tape);
  auto fields = embed(bound, batch, id_table == nullptr);
  if (id_table) {
    if (id_table->shape() != this->id_table().value.shape()) {
      throw ShapeError("predict_values: id table " + shape_string(id_table->shape()));
    }
    fields[schema_.ad_id_field()] = ad::sparse_matmul(batch.pooled[schema_.ad_id_field()], tape.leaf_ref(*id_table));
  }
  Var p = predict(bound, batch, fields);
  auto vals = p.value().values();
  return {vals.begin(), vals.end()};
}

std::uint64_t BaseModel::checksum() const { return metaemb::checksum(std::span<const Parameter>(params_)); }

std::vector<double> pretrain(BaseModel& model, const Dataset& data, std::span<const std::size_t> rows,
                             const PretrainConfig& config) {
  if (rows.empty()) throw ValidationError("pretrain: empty dataset");
  if (config.batch_size == 0) throw ValidationError("pretrain: batch size must be positive");
  if (!(config.lr >= 0.0)) throw ValidationError("pretrain: learning rate must be non-negative");
  if (!(data.schema() == model.schema())) throw ValidationError("pretrain: dataset schema differs from the model's");

  std::vector<Parameter*> trainable;
  std::vector<std::size_t> trainable_index;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    if (model.parameters()[i].trainable) {
      trainable.push_back(&model.parameters()[i]);
      trainable_index.push_back(i);
    }
  }

  std::vector<double> trace;
  std::vector<std::size_t> order(rows.begin(), rows.end());
  Rng rng(derive_seed(config.seed, "pretrain"));
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Batch batch = make_batch(data, std::span<const std::size_t>(order).subspan(start, end - start));
      ad::Tape tape;
      auto bound = model.bind(tape);
      Var loss = ad::bce_loss(model.predict(bound, batch, model.embed(bound, batch)), batch.labels);
      trace.push_back(loss.value().item());
      if (config.lr == 0.0 || trainable.empty()) continue;
      std::vector<Var> wrt;
      for (auto i : trainable_index) wrt.push_back(bound.params[i]);
      auto grads = tape.grad(loss, wrt);
      sgd_step(trainable, grads, config.lr);
    }
  }
  return trace;
}

double mean_logloss(const BaseModel& model, const Dataset& data, std::span<const std::size_t> rows,
                    const Tensor* id_table) {
  if (rows.empty()) throw ValidationError("mean_logloss: no rows");
  double total = 0.0;
  constexpr std::size_t kChunk = 2048;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    const std::size_t end = std::min(rows.size(), start + kChunk);
    Batch batch = make_batch(data, rows.subspan(start, end - start));
    auto p = model.predict_values(batch, id_table);
    for (std::size_t i = 0; i < p.size(); ++i) total += ad::bce(p[i], static_cast<int>(batch.labels[i]));
  }
  return total / static_cast<double>(rows.size());
}

}  // namespace metaemb
