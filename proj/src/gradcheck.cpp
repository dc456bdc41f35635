#include "metaemb/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "metaemb/errors.hpp"
#include "metaemb/finite_diff.hpp"
#include "metaemb/meta.hpp"
#include "metaemb/ops.hpp"
#include "metaemb/random.hpp"
#include "metaemb/synthetic.hpp"

namespace metaemb {

bool GradCheckReport::pass() const {
  return !suites.empty() && std::all_of(suites.begin(), suites.end(), [](const auto& s) { return s.pass; });
}

std::optional<ad::OpKind> parse_op_kind(std::string_view name) {
  for (int k = 0; k <= static_cast<int>(ad::OpKind::clip); ++k) {
    auto kind = static_cast<ad::OpKind>(k);
    if (ad::op_name(kind) == name) return kind;
  }
  return std::nullopt;
}

namespace {

struct FaultGuard {
  explicit FaultGuard(std::optional<ad::OpKind> kind) { ad::debug::inject_vjp_fault(kind); }
  ~FaultGuard() { ad::debug::inject_vjp_fault(std::nullopt); }
};

SynthData check_data(std::uint64_t seed) {
  SynthConfig sc;
  sc.n_ads = 6;
  sc.samples_per_ad = 24;
  sc.n_ad_features = 2;
  sc.ad_feature_vocab = 4;
  sc.n_user_features = 2;
  sc.user_feature_vocab = 6;
  sc.seed = seed;
  return synth_generate(sc);
}

BaseModel check_model(const GradCheckConfig& cfg, const Schema& schema, ModelVariant v, std::uint64_t seed) {
  ModelConfig mc;
  mc.variant = v;
  mc.embedding_dim = cfg.embedding_dim;
  mc.hidden_dims = v == ModelVariant::fm ? std::vector<std::size_t>{} : cfg.hidden_dims;
  mc.init_stddev = 0.5;
  mc.seed = seed;
  auto model = BaseModel::build(mc, schema);
  Rng rng(derive_seed(seed, "gradcheck-jitter"));
  for (auto& p : model.parameters())
    for (double& x : p.value.values()) x += normal(rng, 0.0, 0.2);
  return model;
}

// Max |a - n| over max(|a|, |n|) across a whole gradient.
struct ErrorAccumulator {
  double diff = 0.0, scale = 0.0;
  void add(double analytic, double numeric) {
    diff = std::max(diff, std::abs(analytic - numeric));
    scale = std::max({scale, std::abs(analytic), std::abs(numeric)});
  }
  double value() const { return diff / std::max(scale, 1e-8); }
};

double first_order_error(BaseModel& model, const Dataset& data, std::size_t row) {
  const std::vector<std::size_t> rows{row};
  const Batch batch = make_batch(data, rows);
  const Schema& schema = model.schema();
  ErrorAccumulator acc;

  // theta and every table through the lookup path.
  {
    ad::Tape tape;
    auto bound = model.bind(tape);
    auto loss = ad::bce_loss(model.predict(bound, batch, model.embed(bound, batch)), batch.labels);
    auto grads = tape.grad(loss, bound.params);
    constexpr double h = 1e-5;
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
      Tensor& value = model.parameters()[i].value;
      std::vector<char> touched(value.numel(), 1);
      for (std::size_t f = 0; f < schema.size(); ++f) {
        if (&model.table(f).value != &value) continue;
        std::fill(touched.begin(), touched.end(), 0);
        for (auto v : data.values(row, f))
          for (std::size_t d = 0; d < value.cols(); ++d) touched[static_cast<std::size_t>(v) * value.cols() + d] = 1;
      }
      for (std::size_t j = 0; j < value.numel(); ++j) {
        if (!touched[j]) {
          acc.add(grads[i][j], 0.0);
          continue;
        }
        const double saved = value[j];
        value[j] = saved + h;
        const double up = mean_logloss(model, data, rows);
        value[j] = saved - h;
        const double down = mean_logloss(model, data, rows);
        value[j] = saved;
        acc.add(grads[i][j], (up - down) / (2 * h));
      }
    }
  }

  // phi supplied explicitly.
  const std::size_t ad_field = schema.ad_id_field();
  Tensor phi(Shape{1, model.embedding_dim()});
  auto id_row = model.id_table().value.row(static_cast<std::size_t>(data.ad_id(row)));
  std::copy(id_row.begin(), id_row.end(), phi.values().begin());
  auto loss_at = [&](const Tensor& x) {
    ad::Tape tape;
    auto bound = model.bind(tape);
    auto fields = model.embed(bound, batch, false);
    fields[ad_field] = tape.leaf(x);
    return ad::bce_loss(model.predict(bound, batch, fields), batch.labels).value().item();
  };
  ad::Tape tape;
  auto bound = model.bind(tape);
  auto x = tape.leaf(phi);
  auto fields = model.embed(bound, batch, false);
  fields[ad_field] = x;
  Tensor g = ad::grad(ad::bce_loss(model.predict(bound, batch, fields), batch.labels), x);
  Tensor num = numeric_gradient(loss_at, phi);
  for (std::size_t j = 0; j < g.numel(); ++j) acc.add(g[j], num[j]);
  return acc.value();
}

Tensor phi_gradient(const BaseModel& model, const Batch& batch, const Tensor& phi) {
  ad::Tape tape;
  auto bound = model.bind(tape);
  auto x = tape.leaf(phi);
  return ad::grad(loss_with_embedding(model, bound, batch, x), x);
}

double meta_objective(const BaseModel& model, const Generator& gen, const Tensor& w, const Dataset& data,
                      std::span<const std::size_t> a, std::span<const std::size_t> b, const MetaConfig& cfg) {
  ad::Tape tape;
  const Tensor phi = Generator::generate(tape.leaf(w), gen.pooled_features(model, data, a[0])).value();
  const Batch ba = make_batch(data, a), bb = make_batch(data, b);
  auto loss = [&](const Batch& batch, const Tensor& p) {
    ad::Tape t;
    auto bound = model.bind(t);
    return loss_with_embedding(model, bound, batch, t.leaf(p)).value().item();
  };
  const Tensor adapted = adapt_embedding(phi, phi_gradient(model, ba, phi), cfg.inner_lr);
  double reg = 0.0;
  for (double v : w.values()) reg += v * v;
  return cfg.alpha * loss(ba, phi) + (1.0 - cfg.alpha) * loss(bb, adapted) + gen.l2() * reg;
}

}  // namespace

std::size_t grad_check_parameter_count(const GradCheckConfig& config) {
  const auto data = check_data(config.seed);
  std::size_t most = 0;
  for (auto v : all_variants()) {
    ModelConfig mc;
    mc.variant = v;
    mc.embedding_dim = config.embedding_dim;
    mc.hidden_dims = v == ModelVariant::fm ? std::vector<std::size_t>{} : config.hidden_dims;
    auto model = BaseModel::build(mc, data.data.schema());
    std::size_t n = 0;
    for (const auto& p : model.parameters()) n += p.value.numel();
    n += config.embedding_dim * config.embedding_dim * data.data.schema().ad_feature_fields().size();
    most = std::max(most, n);
  }
  return most;
}

GradCheckReport grad_check(const GradCheckConfig& config) {
  if (config.embedding_dim < 2) throw ValidationError("grad-check: embedding dimension must be at least 2");
  if (config.batch_size == 0 || config.batch_size * 2 > 24) {
    throw ValidationError("grad-check: batch size must lie in [1, 12]");
  }
  GradCheckReport report;
  report.parameters = grad_check_parameter_count(config);
  if (report.parameters > kGradCheckMaxParams) {
    throw ValidationError("grad-check: " + std::to_string(report.parameters) + " parameters exceed the limit of " +
                          std::to_string(kGradCheckMaxParams));
  }
  FaultGuard guard(config.fault);
  const auto synth = check_data(config.seed);
  const Dataset& data = synth.data;
  auto groups = group_by_ad(data);
  Rng rng(derive_seed(config.seed, "gradcheck"));

  for (auto v : all_variants()) {
    auto model = check_model(config, data.schema(), v, derive_seed(config.seed, static_cast<std::uint64_t>(v)));
    GradCheckSuite suite{"first-order/" + std::string(to_string(v)), 0.0, 0, false};
    for (std::size_t i = 0; i < config.instances; ++i) {
      suite.max_rel_error = std::max(suite.max_rel_error, first_order_error(model, data, uniform_index(rng, data.size())));
      ++suite.checks;
    }
    suite.pass = suite.max_rel_error <= config.tolerance;
    report.suites.push_back(suite);
  }

  {
    GradCheckSuite suite{"hvp", 0.0, 0, false};
    for (auto v : all_variants()) {
      auto model = check_model(config, data.schema(), v, derive_seed(config.seed, 100 + static_cast<std::uint64_t>(v)));
      const auto& g = groups[uniform_index(rng, groups.size())];
      std::vector<std::size_t> rows(g.rows.begin(), g.rows.begin() + static_cast<std::ptrdiff_t>(config.batch_size));
      const Batch batch = make_batch(data, rows);
      Tensor phi(Shape{1, config.embedding_dim}), dir(Shape{1, config.embedding_dim});
      for (double& x : phi.values()) x = normal(rng, 0.0, 0.5);
      for (double& x : dir.values()) x = normal(rng);
      ad::Tape tape;
      auto bound = model.bind(tape);
      auto x = tape.leaf(phi);
      Tensor analytic = ad::hvp(loss_with_embedding(model, bound, batch, x), x, dir);
      Tensor numeric = numeric_hvp([&](const Tensor& p) { return phi_gradient(model, batch, p); }, phi, dir);
      suite.max_rel_error = std::max(suite.max_rel_error, relative_error(analytic, numeric));
      ++suite.checks;
    }
    suite.pass = suite.max_rel_error <= config.tolerance;
    report.suites.push_back(suite);
  }

  {
    GradCheckSuite suite{"meta-gradient", 0.0, 0, false};
    for (std::size_t c = 0; c < config.meta_configs; ++c) {
      const auto v = all_variants()[c % all_variants().size()];
      auto model = check_model(config, data.schema(), v, derive_seed(config.seed, 200 + c));
      auto gen = Generator::build(model, c % 3 == 0 ? Pooling::concat : Pooling::average, 1e-3, c);
      for (double& x : gen.weights().values()) x *= 2.0;
      MetaConfig mc;
      mc.alpha = uniform(rng, 0.0, 1.0);
      mc.inner_lr = uniform(rng, 0.2, 1.0);
      mc.batch_size = config.batch_size;
      const auto& g = groups[c % groups.size()];
      Rng pair_rng(derive_seed(config.seed, 300 + c));
      auto pair = sample_meta_pair(g, config.batch_size, pair_rng);
      auto mg = meta_gradient(model, gen, data, pair->batch_a, pair->batch_b, mc);
      Tensor numeric = numeric_gradient(
          [&](const Tensor& w) { return meta_objective(model, gen, w, data, pair->batch_a, pair->batch_b, mc); },
          gen.weights());
      suite.max_rel_error = std::max(suite.max_rel_error, relative_error(mg.grad_w, numeric));
      ++suite.checks;
    }
    suite.pass = suite.max_rel_error <= config.tolerance;
    report.suites.push_back(suite);
  }
  return report;
}

}  // namespace metaemb
