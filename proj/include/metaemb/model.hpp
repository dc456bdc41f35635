#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "metaemb/dataset.hpp"
#include "metaemb/optim.hpp"
#include "metaemb/tape.hpp"

namespace metaemb {

enum class ModelVariant { fm, wide_deep, ipnn, opnn, pnn_star, deepfm };

std::string_view to_string(ModelVariant v);
ModelVariant parse_variant(std::string_view s);
const std::array<ModelVariant, 6>& all_variants();

struct ModelConfig {
  ModelVariant variant = ModelVariant::deepfm;
  std::size_t embedding_dim = 16;
  std::vector<std::size_t> hidden_dims{64, 32, 16};
  double init_stddev = 0.01;
  std::uint64_t seed = 0;
};

// Model inputs for a set of dataset rows.
struct Batch {
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> ad_ids;
  std::vector<SparsePtr> pooled;    // per field: B x vocab, mean over the field's values
  std::vector<SparsePtr> presence;  // per field: B x vocab, 1 per distinct value
  Tensor labels;                    // B x 1

  std::size_t size() const { return rows.size(); }
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows);

// Embedding-and-MLP click model f_theta(phi, u, v). Every field has an
// embedding table of width m; the ad-ID table is Phi.
class BaseModel {
 public:
  static BaseModel build(const ModelConfig& config, const Schema& schema);

  const ModelConfig& config() const { return config_; }
  const Schema& schema() const { return schema_; }
  ModelVariant variant() const { return config_.variant; }
  std::size_t embedding_dim() const { return config_.embedding_dim; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;
  Parameter& table(std::size_t field) { return params_[table_index_[field]]; }
  const Parameter& table(std::size_t field) const { return params_[table_index_[field]]; }
  const Parameter& id_table() const { return table(schema_.ad_id_field()); }
  Parameter& id_table() { return table(schema_.ad_id_field()); }

  // Tape leaves for all parameters, parallel to parameters().
  struct Bound {
    std::vector<ad::Var> params;
  };
  Bound bind(ad::Tape& tape) const;

  // One B x m embedding per field, token lists average-pooled. The ad-ID slot
  // is looked up from Phi when include_id is set and left empty otherwise.
  std::vector<ad::Var> embed(const Bound& bound, const Batch& batch, bool include_id = true) const;

  // B x 1 click probabilities. fields[schema().ad_id_field()] is the ad
  // embedding phi, either looked up or supplied by the caller.
  ad::Var predict(const Bound& bound, const Batch& batch, std::span<const ad::Var> fields) const;

  // Forward pass without gradients; ad embeddings come from `id_table`
  // (defaults to Phi).
  std::vector<double> predict_values(const Batch& batch, const Tensor* id_table = nullptr) const;

  std::uint64_t checksum() const;

  // Restores a model from its parts, validating every parameter shape.
  static BaseModel from_parts(const ModelConfig& config, const Schema& schema, std::vector<Parameter> params);

 private:
  BaseModel(ModelConfig config, Schema schema);
  void index_parameters();
  std::size_t add_param(std::string name, Tensor value);
  ad::Var mlp(const Bound& bound, ad::Var x) const;
  ad::Var fm_terms(const Bound& bound, std::span<const ad::Var> fields, ad::Var concat) const;

  ModelConfig config_;
  Schema schema_;
  std::vector<Parameter> params_;
  std::vector<std::size_t> table_index_;
  std::vector<std::size_t> wide_index_;
  std::vector<std::size_t> hidden_w_;
  std::vector<std::size_t> hidden_b_;
  std::size_t bias_ = 0;
  std::size_t out_ = 0;
  std::size_t fm_linear_ = 0;
};

struct PretrainConfig {
  std::size_t epochs = 1;
  double lr = 0.01;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
};

// Mini-batch SGD on log-loss updating theta and all embedding tables jointly.
// Returns the per-batch training loss trace.
std::vector<double> pretrain(BaseModel& model, const Dataset& data, std::span<const std::size_t> rows,
                             const PretrainConfig& config);

// Mean log-loss over rows (no training).
double mean_logloss(const BaseModel& model, const Dataset& data, std::span<const std::size_t> rows,
                    const Tensor* id_table = nullptr);

}  // namespace metaemb
