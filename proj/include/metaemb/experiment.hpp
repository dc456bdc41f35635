#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "metaemb/meta.hpp"
#include "metaemb/model.hpp"
#include "metaemb/split.hpp"
#include "metaemb/synthetic.hpp"

namespace metaemb {

enum class InitPolicy { random, meta };
enum class Phase { cold, warm_a, warm_b, warm_c };

std::string_view to_string(InitPolicy p);
std::string_view to_string(Phase p);
InitPolicy parse_policy(std::string_view s);
inline constexpr Phase kPhases[] = {Phase::cold, Phase::warm_a, Phase::warm_b, Phase::warm_c};

struct DatasetSpec {
  std::string kind = "synthetic";  // synthetic | movielens | csv
  std::string path;                // movielens directory or csv file
  std::string schema;              // csv sidecar
  SynthConfig synth;
};

struct ExperimentConfig {
  std::string name = "synthetic";
  DatasetSpec dataset;
  SplitSpec split;
  std::vector<ModelVariant> models{ModelVariant::deepfm};
  std::size_t embedding_dim = 16;
  std::vector<std::size_t> hidden_dims{64, 32, 16};
  double init_stddev = 0.01;
  PretrainConfig pretrain;
  MetaConfig meta;  // batch_size and seed are taken from `split` and the run seed
  Pooling pooling = Pooling::average;
  double l2 = 1e-4;
  std::optional<double> warmup_lr;  // defaults to meta.inner_lr
  std::vector<InitPolicy> policies{InitPolicy::random, InitPolicy::meta};
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";
  std::size_t threads = 1;
  bool svg = false;

  double effective_warmup_lr() const { return warmup_lr.value_or(meta.inner_lr); }
  // Paths resolved, values in range, seeds and models non-empty.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
// Keys missing from `j` keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
// Applies a dotted-key override such as "meta.alpha" = "0.2". Lists are
// comma separated.
void apply_override(nlohmann::json& j, const std::string& key, const std::string& value);

// Resolves the dataset location; an empty or relative path is taken relative
// to $META_EMBEDDING_DATA.
std::filesystem::path resolve_data_path(const std::string& path);
Dataset load_dataset(const DatasetSpec& spec);

struct PhaseScores {
  Phase phase = Phase::cold;
  double auc = 0.0;
  double logloss = 0.0;
  double per_ad_auc = 0.0;
};

struct MetricRow {
  std::string dataset;
  ModelVariant model = ModelVariant::deepfm;
  InitPolicy policy = InitPolicy::random;
  Phase phase = Phase::cold;
  std::uint64_t seed = 0;
  double auc = 0.0;
  double logloss = 0.0;
  double auc_pct = 0.0;
  double logloss_pct = 0.0;
  double per_ad_auc = 0.0;
};

struct SplitStats {
  std::size_t old_ids = 0, old_samples = 0;
  std::size_t new_ids = 0, new_samples = 0;
  std::size_t discarded_ids = 0, discarded_samples = 0;
  std::size_t total_samples = 0;
};

struct SummaryRow {
  std::string model;  // a variant name or "average"
  InitPolicy policy = InitPolicy::random;
  Phase phase = Phase::cold;
  double auc_mean = 0.0, auc_std = 0.0;
  double logloss_mean = 0.0, logloss_std = 0.0;
  double auc_pct_mean = 0.0, logloss_pct_mean = 0.0;
};

struct ExperimentReport {
  std::string dataset;
  SplitStats split;
  std::vector<MetricRow> rows;
  std::vector<SummaryRow> summary;
};

SplitStats split_stats(const OldNewSplit& split, std::size_t total);

// The dataset with unseen non-ID features masked and its split; shared by
// all models and seeds of an experiment.
struct PreparedData {
  Dataset data;
  OldNewSplit split;
};
PreparedData prepare_data(const ExperimentConfig& config);

ModelConfig model_config(const ExperimentConfig& config, ModelVariant variant, std::uint64_t seed);
MetaConfig meta_config(const ExperimentConfig& config, std::uint64_t seed);

// Step 0: pre-train on all old-ad rows.
BaseModel pretrain_stage(const ExperimentConfig& config, const PreparedData& prep, ModelVariant variant,
                         std::uint64_t seed);
// Step 1: meta-train a generator against a frozen base model.
Generator meta_stage(const ExperimentConfig& config, const PreparedData& prep, const BaseModel& model,
                     std::uint64_t seed, MetaTrainResult* trace = nullptr);
// Steps 2-6 for one policy: initialise every new ad's row, evaluate on the
// pooled holdout, then warm up with batches a, b, c evaluating after each.
// The base model is not modified.
std::vector<PhaseScores> evaluate_policy(const ExperimentConfig& config, const PreparedData& prep,
                                         const SplitManifest& manifest, const BaseModel& model,
                                         const Generator* gen, InitPolicy policy, std::uint64_t seed);

// Fills percentages from the random-cold anchor of each (model, seed) and the
// per-(model, policy, phase) summary plus the across-model average.
void finalize_report(ExperimentReport& report);

// Output layout under config.output_dir.
struct OutputPaths {
  std::filesystem::path root;
  std::filesystem::path manifest(std::uint64_t seed) const;
  std::filesystem::path model(ModelVariant v, std::uint64_t seed) const;
  std::filesystem::path generator(ModelVariant v, std::uint64_t seed) const;
  std::filesystem::path trace(ModelVariant v, std::uint64_t seed) const;
  std::filesystem::path metrics_csv() const { return root / "metrics.csv"; }
  std::filesystem::path report_json() const { return root / "report.json"; }
  std::filesystem::path report_txt() const { return root / "report.txt"; }
  std::filesystem::path status() const { return root / "status.json"; }
  std::filesystem::path svg() const { return root / "curves.svg"; }
  std::filesystem::path config() const { return root / "config.json"; }
};

// Stage drivers used by the CLI. Each writes its artefacts and status.json;
// failures raise StageError after marking the run incomplete.
void run_pretrain(const ExperimentConfig& config);
void run_meta_train(const ExperimentConfig& config);
ExperimentReport run_evaluate(const ExperimentConfig& config);
ExperimentReport run_experiment(const ExperimentConfig& config);

void write_metrics_csv(const std::filesystem::path& path, const ExperimentReport& report);
void write_report_json(const std::filesystem::path& path, const ExperimentReport& report);
void write_report_text(const std::filesystem::path& path, const ExperimentReport& report, const ExperimentConfig& config);
void write_svg(const std::filesystem::path& path, const ExperimentReport& report);

}  // namespace metaemb
