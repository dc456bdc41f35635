#include "metaemb/meta.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "metaemb/errors.hpp"
#include "metaemb/ops.hpp"
#include "metaemb/random.hpp"

namespace metaemb {

using ad::Var;

std::string_view to_string(Pooling p) {
  switch (p) {
    case Pooling::average: return "average";
    case Pooling::max: return "max";
    case Pooling::concat: return "concat";
  }
  return "?";
}

Pooling parse_pooling(std::string_view s) {
  for (auto p : {Pooling::average, Pooling::max, Pooling::concat}) {
    if (to_string(p) == s) return p;
  }
  throw ValidationError("unknown pooling '" + std::string(s) + "'");
}

namespace {

std::size_t pooled_width_for(const BaseModel& model, Pooling pooling) {
  const std::size_t n = model.schema().ad_feature_fields().size();
  if (n == 0) throw ValidationError("generator: the schema has no ad-feature fields");
  return pooling == Pooling::concat ? n * model.embedding_dim() : model.embedding_dim();
}

}  // namespace

Generator Generator::build(const BaseModel& model, Pooling pooling, double l2, std::uint64_t seed) {
  const std::size_t width = pooled_width_for(model, pooling);
  const std::size_t m = model.embedding_dim();
  Rng rng(derive_seed(seed, "generator-init"));
  const double limit = std::sqrt(6.0 / static_cast<double>(width + m));
  Tensor w(Shape{m, width});
  for (double& v : w.values()) v = uniform(rng, -limit, limit);
  return from_parts(model, pooling, l2, std::move(w));
}

Generator Generator::from_parts(const BaseModel& model, Pooling pooling, double l2, Tensor w) {
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ValidationError("generator: L2 coefficient must be non-negative");
  const Shape want{model.embedding_dim(), pooled_width_for(model, pooling)};
  if (w.shape() != want) {
    throw ShapeError("generator weights " + shape_string(w.shape()) + ", expected " + shape_string(want));
  }
  Generator g;
  g.pooling_ = pooling;
  g.l2_ = l2;
  g.w_ = std::move(w);
  return g;
}

Tensor Generator::pooled_features(const BaseModel& model, const Dataset& data, std::size_t row) const {
  const std::size_t m = model.embedding_dim();
  const auto fields = model.schema().ad_feature_fields();
  std::vector<std::vector<double>> e(fields.size(), std::vector<double>(m, 0.0));
  for (std::size_t k = 0; k < fields.size(); ++k) {
    auto vals = data.values(row, fields[k]);
    const Tensor& table = model.table(fields[k]).value;
    for (auto v : vals) {
      if (v < 0 || static_cast<std::size_t>(v) >= table.rows()) {
        throw IndexError("generator: index " + std::to_string(v) + " outside field '" +
                         model.schema().field(fields[k]).name + "'");
      }
      auto r = table.row(static_cast<std::size_t>(v));
      for (std::size_t d = 0; d < m; ++d) e[k][d] += r[d] / static_cast<double>(vals.size());
    }
  }
  Tensor out(Shape{1, w_.cols()});
  switch (pooling_) {
    case Pooling::average:
      for (auto& f : e)
        for (std::size_t d = 0; d < m; ++d) out[d] += f[d] / static_cast<double>(e.size());
      break;
    case Pooling::max:
      for (std::size_t d = 0; d < m; ++d) {
        double best = e[0][d];
        for (auto& f : e) best = std::max(best, f[d]);
        out[d] = best;
      }
      break;
    case Pooling::concat:
      for (std::size_t k = 0; k < e.size(); ++k)
        for (std::size_t d = 0; d < m; ++d) out[k * m + d] = e[k][d];
      break;
  }
  return out;
}

Var Generator::generate(Var w, const Tensor& pooled) {
  return ad::tanh(ad::matmul(ad::constant(w.tape(), pooled), ad::transpose(w)));
}

Tensor Generator::generate(const BaseModel& model, const Dataset& data, std::size_t row) const {
  ad::Tape tape;
  return generate(tape.leaf_ref(w_), pooled_features(model, data, row)).value();
}

void MetaConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("meta: alpha must lie in [0, 1]");
  if (!(inner_lr >= 0.0) || !std::isfinite(inner_lr)) throw ValidationError("meta: inner step size must be >= 0");
  if (!(outer_lr >= 0.0) || !std::isfinite(outer_lr)) throw ValidationError("meta: outer step size must be >= 0");
  if (batch_size == 0) throw ValidationError("meta: batch size must be positive");
  if (ids_per_step == 0) throw ValidationError("meta: ids_per_step must be positive");
}

double meta_loss(double l_a, double l_b, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("meta_loss: alpha must lie in [0, 1]");
  return alpha * l_a + (1.0 - alpha) * l_b;
}

Tensor adapt_embedding(const Tensor& phi, const Tensor& grad, double a) {
  if (phi.shape() != grad.shape()) {
    throw ShapeError("adapt_embedding: " + shape_string(phi.shape()) + " vs " + shape_string(grad.shape()));
  }
  Tensor out = phi;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= a * grad[i];
  return out;
}

Var loss_with_embedding(const BaseModel& model, const BaseModel::Bound& bound, const Batch& batch, Var phi) {
  auto fields = model.embed(bound, batch, false);
  fields[model.schema().ad_id_field()] = ad::broadcast_rows(phi, batch.size());
  return ad::bce_loss(model.predict(bound, batch, fields), batch.labels);
}

double cold_loss(const BaseModel& model, const Generator& gen, const Dataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ValidationError("cold_loss: empty batch");
  ad::Tape tape;
  auto bound = model.bind(tape);
  Var phi = Generator::generate(tape.leaf_ref(gen.weights()), gen.pooled_features(model, data, rows[0]));
  return loss_with_embedding(model, bound, make_batch(data, rows), phi).value().item();
}

namespace {

void check_single_ad(const Dataset& data, std::span<const std::size_t> rows, std::int32_t ad, const char* what) {
  for (auto r : rows) {
    if (r >= data.size()) throw IndexError(std::string(what) + ": row " + std::to_string(r) + " out of range");
    if (data.ad_id(r) != ad) {
      throw ValidationError(std::string(what) + ": row " + std::to_string(r) + " belongs to ad " +
                            std::to_string(data.ad_id(r)) + ", expected " + std::to_string(ad));
    }
  }
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

MetaGradient meta_gradient(const BaseModel& model, const Generator& gen, const Dataset& data,
                           std::span<const std::size_t> batch_a, std::span<const std::size_t> batch_b,
                           const MetaConfig& config) {
  config.validate();
  if (batch_a.empty() || batch_b.empty()) throw ValidationError("meta_gradient: empty batch");
  const std::int32_t ad = data.ad_id(batch_a[0]);
  check_single_ad(data, batch_a, ad, "meta_gradient");
  check_single_ad(data, batch_b, ad, "meta_gradient");
  std::set<std::size_t> seen(batch_a.begin(), batch_a.end());
  for (auto r : batch_b) {
    if (seen.count(r)) throw ValidationError("meta_gradient: batches overlap at row " + std::to_string(r));
  }

  ad::Tape tape;
  auto bound = model.bind(tape);
  Var w = tape.leaf_ref(gen.weights());
  Var phi_init = Generator::generate(w, gen.pooled_features(model, data, batch_a[0]));
  Var l_a = loss_with_embedding(model, bound, make_batch(data, batch_a), phi_init);
  Var phi_adapted = phi_init;
  if (config.inner_lr != 0.0) {
    const Var wrt[] = {phi_init};
    Var g = tape.grad_graph(l_a, wrt)[0];
    phi_adapted = ad::sub(phi_init, ad::scale(g, config.inner_lr));
  }
  Var l_b = loss_with_embedding(model, bound, make_batch(data, batch_b), phi_adapted);
  Var total = ad::add(ad::scale(l_a, config.alpha), ad::scale(l_b, 1.0 - config.alpha));
  if (gen.l2() > 0.0) total = ad::add(total, ad::scale(ad::sum(ad::square(w)), gen.l2()));

  MetaGradient out;
  out.l_a = l_a.value().item();
  out.l_b = l_b.value().item();
  out.l_meta = meta_loss(out.l_a, out.l_b, config.alpha);
  const Var wrt[] = {w};
  out.grad_w = tape.grad(total, wrt)[0];
  return out;
}

MetaTrainResult train_meta(const BaseModel& model, Generator& gen, const Dataset& data,
                           std::span<const AdGroup> old_groups, const MetaConfig& config) {
  config.validate();
  const std::size_t k = config.batch_size;
  MetaTrainResult result;
  std::vector<const AdGroup*> eligible;
  for (const auto& g : old_groups) {
    if (g.count() < 2 * k) {
      result.skipped.push_back(g.ad_id);
    } else {
      eligible.push_back(&g);
    }
  }
  if (!result.skipped.empty()) {
    std::clog << "warning: meta-training skips " << result.skipped.size() << " ad(s) with fewer than " << 2 * k
              << " samples\n";
  }
  if (eligible.empty()) return result;

  const std::size_t threads = std::max<std::size_t>(1, config.threads);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(derive_seed(config.seed, "meta-epoch"), epoch);
    Rng order_rng(epoch_seed);
    auto order = eligible;
    shuffle(order, order_rng);

    for (std::size_t start = 0; start < order.size(); start += config.ids_per_step) {
      const std::size_t end = std::min(order.size(), start + config.ids_per_step);
      std::vector<const AdGroup*> step(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(end));
      std::sort(step.begin(), step.end(), [](auto* x, auto* y) { return x->ad_id < y->ad_id; });

      std::vector<MetaGradient> grads(step.size());
      auto work = [&](std::size_t i) {
        Rng rng(derive_seed(epoch_seed, static_cast<std::uint64_t>(step[i]->ad_id)));
        auto pair = sample_meta_pair(*step[i], k, rng);
        grads[i] = meta_gradient(model, gen, data, pair->batch_a, pair->batch_b, config);
      };
      if (threads == 1 || step.size() == 1) {
        for (std::size_t i = 0; i < step.size(); ++i) work(i);
      } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, step.size()); ++t) {
          pool.emplace_back([&] {
            for (std::size_t i = next++; i < step.size(); i = next++) {
              try {
                work(i);
              } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
              }
            }
          });
        }
        for (auto& th : pool) th.join();
        if (error) std::rethrow_exception(error);
      }

      MetaStepTrace trace;
      trace.epoch = epoch;
      trace.step = result.steps.size();
      Tensor total(gen.weights().shape());
      for (std::size_t i = 0; i < step.size(); ++i) {
        const auto& g = grads[i];
        for (std::size_t j = 0; j < total.numel(); ++j) total[j] += g.grad_w[j];
        trace.ids.push_back({step[i]->ad_id, g.l_a, g.l_b, g.l_meta, norm(g.grad_w)});
      }
      result.samples_used += 2 * k * step.size();
      if (config.outer_lr > 0.0) {
        Tensor& w = gen.weights();
        for (std::size_t j = 0; j < w.numel(); ++j) w[j] -= config.outer_lr * total[j];
        if (!w.all_finite()) throw NumericError("meta-training diverged: non-finite generator weights");
      }
      trace.update_norm = config.outer_lr * norm(total);
      result.steps.push_back(std::move(trace));
    }
  }
  return result;
}

Tensor warmup_update(const BaseModel& model, std::int32_t ad_id, const Tensor& row, const Dataset& data,
                     std::span<const std::size_t> rows, double lr) {
  if (rows.empty()) throw ValidationError("warmup_update: empty batch");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("warmup_update: learning rate must be >= 0");
  check_single_ad(data, rows, ad_id, "warmup_update");
  const Shape want{1, model.embedding_dim()};
  if (row.shape() != want) throw ShapeError("warmup_update: row " + shape_string(row.shape()));
  if (lr == 0.0) return row;
  ad::Tape tape;
  auto bound = model.bind(tape);
  Var phi = tape.leaf_ref(row);
  Var loss = loss_with_embedding(model, bound, make_batch(data, rows), phi);
  return adapt_embedding(row, ad::grad(loss, phi), lr);
}

}  // namespace metaemb
