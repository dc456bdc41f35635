#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metaemb/model.hpp"
#include "metaemb/split.hpp"

namespace metaemb {

enum class Pooling { average, max, concat };

std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view s);

// Maps an ad's features to an initial ID embedding,
//   phi_init = tanh(W * pool(e_1, ..., e_F))
// where e_f are the frozen ad-feature embeddings of the base model. W is
// m x (pooled width) with no bias and is the only trainable part.
class Generator {
 public:
  static Generator build(const BaseModel& model, Pooling pooling, double l2, std::uint64_t seed);
  // Restores a generator; checks that W fits the model.
  static Generator from_parts(const BaseModel& model, Pooling pooling, double l2, Tensor w);

  Pooling pooling() const { return pooling_; }
  double l2() const { return l2_; }
  const Tensor& weights() const { return w_; }
  Tensor& weights() { return w_; }
  std::size_t pooled_width() const { return w_.cols(); }

  // 1 x width pooled ad-feature representation of dataset `row`. Built from
  // the frozen tables, so it is a constant as far as W is concerned.
  Tensor pooled_features(const BaseModel& model, const Dataset& data, std::size_t row) const;

  // 1 x m generated embedding as a function of `w`.
  static ad::Var generate(ad::Var w, const Tensor& pooled);
  Tensor generate(const BaseModel& model, const Dataset& data, std::size_t row) const;

 private:
  Pooling pooling_ = Pooling::average;
  double l2_ = 0.0;
  Tensor w_;
};

struct MetaConfig {
  double alpha = 0.1;
  double inner_lr = 0.01;       // a
  double outer_lr = 1e-3;       // b
  std::size_t batch_size = 20;  // K
  std::size_t ids_per_step = 32;
  std::size_t epochs = 2;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // 0 <= alpha <= 1, a >= 0, b >= 0, K >= 1, ids_per_step >= 1. Zero step
  // sizes are allowed so the reductions can be exercised.
  void validate() const;
};

double meta_loss(double l_a, double l_b, double alpha);

// phi - a * grad.
Tensor adapt_embedding(const Tensor& phi, const Tensor& grad, double a);

// Mean log-loss of the batch with the ad-ID embedding set to phi (1 x m).
ad::Var loss_with_embedding(const BaseModel& model, const BaseModel::Bound& bound, const Batch& batch, ad::Var phi);

// l_a: loss on `rows` with the generated embedding.
double cold_loss(const BaseModel& model, const Generator& gen, const Dataset& data, std::span<const std::size_t> rows);

struct MetaGradient {
  Tensor grad_w;
  double l_a = 0.0;
  double l_b = 0.0;
  double l_meta = 0.0;  // alpha * l_a + (1 - alpha) * l_b, without the L2 term
};

// Exact gradient of alpha * l_a + (1 - alpha) * l_b + l2 * |W|^2 with respect
// to W, where l_b is evaluated at phi' = phi_init - a * dl_a/dphi_init. The
// dependence of phi' on W goes through both terms, so the Hessian of l_a
// appears via double backprop. Both batches must belong to one ad and be
// disjoint.
MetaGradient meta_gradient(const BaseModel& model, const Generator& gen, const Dataset& data,
                           std::span<const std::size_t> batch_a, std::span<const std::size_t> batch_b,
                           const MetaConfig& config);

struct MetaIdTrace {
  std::int32_t ad_id = 0;
  double l_a = 0.0;
  double l_b = 0.0;
  double l_meta = 0.0;
  double grad_norm = 0.0;
};

struct MetaStepTrace {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::vector<MetaIdTrace> ids;  // ascending ad ID
  double update_norm = 0.0;
};

struct MetaTrainResult {
  std::vector<MetaStepTrace> steps;
  std::vector<std::int32_t> skipped;  // ads with fewer than 2K samples
  std::size_t samples_used = 0;
};

// Algorithm-1 SGD over the old ads. Only W changes; the base model is read
// only. Per-ID gradients of one step are summed in ascending ad order, so
// the result does not depend on `threads`.
MetaTrainResult train_meta(const BaseModel& model, Generator& gen, const Dataset& data,
                           std::span<const AdGroup> old_groups, const MetaConfig& config);

// One SGD step on the mean loss of `rows` with respect to the ad's embedding
// row only. Returns the updated row.
Tensor warmup_update(const BaseModel& model, std::int32_t ad_id, const Tensor& row, const Dataset& data,
                     std::span<const std::size_t> rows, double lr);

}  // namespace metaemb
