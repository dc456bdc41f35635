#include "metaemb/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "metaemb/checkpoint.hpp"
#include "metaemb/errors.hpp"
#include "metaemb/loaders.hpp"
#include "metaemb/metrics.hpp"
#include "metaemb/random.hpp"

namespace metaemb {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(InitPolicy p) { return p == InitPolicy::random ? "random" : "meta"; }

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::cold: return "cold";
    case Phase::warm_a: return "warm_a";
    case Phase::warm_b: return "warm_b";
    case Phase::warm_c: return "warm_c";
  }
  return "?";
}

InitPolicy parse_policy(std::string_view s) {
  if (s == "random") return InitPolicy::random;
  if (s == "meta") return InitPolicy::meta;
  throw ValidationError("unknown init policy '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Configuration

json to_json(const ExperimentConfig& c) {
  const auto& s = c.dataset.synth;
  json models = json::array(), policies = json::array();
  for (auto v : c.models) models.push_back(std::string(to_string(v)));
  for (auto p : c.policies) policies.push_back(std::string(to_string(p)));
  return {
      {"name", c.name},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"path", c.dataset.path},
        {"schema", c.dataset.schema},
        {"synth",
         {{"n_ads", s.n_ads},
          {"samples_per_ad", s.samples_per_ad},
          {"n_new_ads", s.n_new_ads},
          {"new_ad_samples", s.new_ad_samples},
          {"n_ad_features", s.n_ad_features},
          {"ad_feature_vocab", s.ad_feature_vocab},
          {"n_user_features", s.n_user_features},
          {"user_feature_vocab", s.user_feature_vocab},
          {"bias", s.bias},
          {"feature_scale", s.feature_scale},
          {"user_scale", s.user_scale},
          {"noise_scale", s.noise_scale},
          {"seed", s.seed}}}}},
      {"split",
       {{"old_threshold", c.split.old_threshold}, {"new_min", c.split.new_min}, {"batch_size", c.split.batch_size}}},
      {"models", models},
      {"model", {{"embedding_dim", c.embedding_dim}, {"hidden_dims", c.hidden_dims}, {"init_stddev", c.init_stddev}}},
      {"pretrain", {{"epochs", c.pretrain.epochs}, {"lr", c.pretrain.lr}, {"batch_size", c.pretrain.batch_size}}},
      {"meta",
       {{"alpha", c.meta.alpha},
        {"inner_lr", c.meta.inner_lr},
        {"outer_lr", c.meta.outer_lr},
        {"ids_per_step", c.meta.ids_per_step},
        {"epochs", c.meta.epochs},
        {"pooling", std::string(to_string(c.pooling))},
        {"l2", c.l2}}},
      {"warmup_lr", c.warmup_lr ? json(*c.warmup_lr) : json(nullptr)},
      {"policies", policies},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir},
      {"threads", c.threads},
      {"svg", c.svg},
  };
}

namespace {

void reject_unknown(const json& given, const json& defaults, const std::string& prefix) {
  if (!given.is_object()) throw ValidationError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ValidationError("config: unknown key '" + key + "'");
    if (defaults[it.key()].is_object()) reject_unknown(it.value(), defaults[it.key()], key);
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: '" + where + key + "' has the wrong type");
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& given) {
  const json defaults = to_json(ExperimentConfig{});
  reject_unknown(given, defaults, "");
  json j = defaults;
  j.merge_patch(given);

  ExperimentConfig c;
  c.name = get<std::string>(j, "name", "");
  const json& d = j["dataset"];
  c.dataset.kind = get<std::string>(d, "kind", "dataset.");
  c.dataset.path = get<std::string>(d, "path", "dataset.");
  c.dataset.schema = get<std::string>(d, "schema", "dataset.");
  const json& s = d["synth"];
  auto& sc = c.dataset.synth;
  sc.n_ads = get<std::size_t>(s, "n_ads", "dataset.synth.");
  sc.samples_per_ad = get<std::size_t>(s, "samples_per_ad", "dataset.synth.");
  sc.n_new_ads = get<std::size_t>(s, "n_new_ads", "dataset.synth.");
  sc.new_ad_samples = get<std::size_t>(s, "new_ad_samples", "dataset.synth.");
  sc.n_ad_features = get<std::size_t>(s, "n_ad_features", "dataset.synth.");
  sc.ad_feature_vocab = get<std::size_t>(s, "ad_feature_vocab", "dataset.synth.");
  sc.n_user_features = get<std::size_t>(s, "n_user_features", "dataset.synth.");
  sc.user_feature_vocab = get<std::size_t>(s, "user_feature_vocab", "dataset.synth.");
  sc.bias = get<double>(s, "bias", "dataset.synth.");
  sc.feature_scale = get<double>(s, "feature_scale", "dataset.synth.");
  sc.user_scale = get<double>(s, "user_scale", "dataset.synth.");
  sc.noise_scale = get<double>(s, "noise_scale", "dataset.synth.");
  sc.seed = get<std::uint64_t>(s, "seed", "dataset.synth.");

  c.split.old_threshold = get<std::size_t>(j["split"], "old_threshold", "split.");
  c.split.new_min = get<std::size_t>(j["split"], "new_min", "split.");
  c.split.batch_size = get<std::size_t>(j["split"], "batch_size", "split.");

  c.models.clear();
  for (const auto& m : get<std::vector<std::string>>(j, "models", "")) c.models.push_back(parse_variant(m));
  c.embedding_dim = get<std::size_t>(j["model"], "embedding_dim", "model.");
  c.hidden_dims = get<std::vector<std::size_t>>(j["model"], "hidden_dims", "model.");
  c.init_stddev = get<double>(j["model"], "init_stddev", "model.");

  c.pretrain.epochs = get<std::size_t>(j["pretrain"], "epochs", "pretrain.");
  c.pretrain.lr = get<double>(j["pretrain"], "lr", "pretrain.");
  c.pretrain.batch_size = get<std::size_t>(j["pretrain"], "batch_size", "pretrain.");

  const json& m = j["meta"];
  c.meta.alpha = get<double>(m, "alpha", "meta.");
  c.meta.inner_lr = get<double>(m, "inner_lr", "meta.");
  c.meta.outer_lr = get<double>(m, "outer_lr", "meta.");
  c.meta.ids_per_step = get<std::size_t>(m, "ids_per_step", "meta.");
  c.meta.epochs = get<std::size_t>(m, "epochs", "meta.");
  c.pooling = parse_pooling(get<std::string>(m, "pooling", "meta."));
  c.l2 = get<double>(m, "l2", "meta.");

  if (j.contains("warmup_lr") && !j["warmup_lr"].is_null()) c.warmup_lr = get<double>(j, "warmup_lr", "");
  c.policies.clear();
  for (const auto& p : get<std::vector<std::string>>(j, "policies", "")) c.policies.push_back(parse_policy(p));
  c.seeds = get<std::vector<std::uint64_t>>(j, "seeds", "");
  c.output_dir = get<std::string>(j, "output_dir", "");
  c.threads = get<std::size_t>(j, "threads", "");
  c.svg = get<bool>(j, "svg", "");
  return c;
}

namespace {

json parse_scalar(const std::string& key, const std::string& text, const json& like) {
  try {
    std::size_t used = 0;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw std::invalid_argument(text);
    }
    if (like.is_number_unsigned() || like.is_number_integer()) {
      if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
      json v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    }
    if (like.is_number() || like.is_null()) {
      if (like.is_null() && text == "null") return nullptr;
      json v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    }
    return text;
  } catch (const std::logic_error&) {
    throw ValidationError("override --" + key + ": cannot parse '" + text + "'");
  }
}

}  // namespace

void apply_override(json& j, const std::string& key, const std::string& value) {
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ValidationError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ValidationError("config key '" + key + "' is a section, not a value");
  if (node->is_array()) {
    json like = node->empty() ? json("") : (*node)[0];
    json out = json::array();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(parse_scalar(key, item, like));
    }
    *node = std::move(out);
  } else {
    *node = parse_scalar(key, value, *node);
  }
}

fs::path resolve_data_path(const std::string& path) {
  const char* root = std::getenv("META_EMBEDDING_DATA");
  if (path.empty()) {
    if (!root || !*root) throw ValidationError("dataset path is empty and META_EMBEDDING_DATA is not set");
    return fs::path(root);
  }
  fs::path p(path);
  if (p.is_relative() && root && *root && !fs::exists(p)) return fs::path(root) / p;
  return p;
}

void ExperimentConfig::validate() const {
  if (models.empty()) throw ValidationError("config: models must not be empty");
  if (seeds.empty()) throw ValidationError("config: seeds must not be empty");
  if (std::find(policies.begin(), policies.end(), InitPolicy::random) == policies.end()) {
    throw ValidationError("config: the random policy defines the 0% anchor and must be listed");
  }
  split.validate();
  MetaConfig mc = meta;
  mc.batch_size = split.batch_size;
  mc.validate();
  if (embedding_dim < 2) throw ValidationError("config: model.embedding_dim must be at least 2");
  if (hidden_dims.empty()) {
    for (auto v : models) {
      if (v != ModelVariant::fm) throw ValidationError("config: model.hidden_dims is empty for a deep variant");
    }
  }
  if (!(init_stddev >= 0.0)) throw ValidationError("config: model.init_stddev must be >= 0");
  if (!(pretrain.lr >= 0.0) || pretrain.batch_size == 0) throw ValidationError("config: bad pretrain settings");
  if (!(effective_warmup_lr() >= 0.0)) throw ValidationError("config: warmup_lr must be >= 0");
  if (!(l2 >= 0.0)) throw ValidationError("config: meta.l2 must be >= 0");
  if (threads == 0) throw ValidationError("config: threads must be positive");
  if (output_dir.empty()) throw ValidationError("config: output_dir must be set");
  if (dataset.kind == "synthetic") {
    dataset.synth.validate();
  } else if (dataset.kind == "movielens") {
    auto dir = resolve_data_path(dataset.path);
    for (const char* f : {"ratings.dat", "movies.dat", "users.dat"}) {
      if (!fs::exists(dir / f)) throw ValidationError("config: " + (dir / f).string() + " does not exist");
    }
  } else if (dataset.kind == "csv") {
    for (const auto& p : {dataset.path, dataset.schema}) {
      if (!fs::exists(resolve_data_path(p))) throw ValidationError("config: " + p + " does not exist");
    }
  } else {
    throw ValidationError("config: unknown dataset kind '" + dataset.kind + "'");
  }
}

Dataset load_dataset(const DatasetSpec& spec) {
  if (spec.kind == "synthetic") return synth_generate(spec.synth).data;
  if (spec.kind == "movielens") return load_movielens_dir(resolve_data_path(spec.path));
  if (spec.kind == "csv") return load_csv_dataset(resolve_data_path(spec.path), resolve_data_path(spec.schema));
  throw ValidationError("unknown dataset kind '" + spec.kind + "'");
}

// ---------------------------------------------------------------------------
// Stages

SplitStats split_stats(const OldNewSplit& split, std::size_t total) {
  SplitStats s;
  s.old_ids = split.old_groups.size();
  s.old_samples = split.old_samples();
  s.new_ids = split.new_groups.size();
  s.new_samples = split.new_samples();
  s.discarded_ids = split.discarded.size();
  for (const auto& g : split.discarded) s.discarded_samples += g.count();
  s.total_samples = total;
  return s;
}

PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData p{load_dataset(config.dataset), {}};
  p.split = split_old_new(p.data, config.split);
  mask_unseen_features(p.data, p.split.old_groups);
  return p;
}

ModelConfig model_config(const ExperimentConfig& config, ModelVariant variant, std::uint64_t seed) {
  ModelConfig m;
  m.variant = variant;
  m.embedding_dim = config.embedding_dim;
  m.hidden_dims = variant == ModelVariant::fm ? std::vector<std::size_t>{} : config.hidden_dims;
  m.init_stddev = config.init_stddev;
  m.seed = derive_seed(seed, "model");
  return m;
}

MetaConfig meta_config(const ExperimentConfig& config, std::uint64_t seed) {
  MetaConfig m = config.meta;
  m.batch_size = config.split.batch_size;
  m.seed = derive_seed(seed, "meta");
  m.threads = config.threads;
  return m;
}

BaseModel pretrain_stage(const ExperimentConfig& config, const PreparedData& prep, ModelVariant variant,
                         std::uint64_t seed) {
  auto model = BaseModel::build(model_config(config, variant, seed), prep.data.schema());
  std::vector<std::size_t> rows;
  for (const auto& g : prep.split.old_groups) rows.insert(rows.end(), g.rows.begin(), g.rows.end());
  std::sort(rows.begin(), rows.end());
  if (rows.empty()) throw ValidationError("no old ads to pre-train on");
  PretrainConfig pc = config.pretrain;
  pc.seed = derive_seed(seed, "pretrain");
  pretrain(model, prep.data, rows, pc);
  return model;
}

Generator meta_stage(const ExperimentConfig& config, const PreparedData& prep, const BaseModel& model,
                     std::uint64_t seed, MetaTrainResult* trace) {
  auto gen = Generator::build(model, config.pooling, config.l2, derive_seed(seed, "generator"));
  auto result = train_meta(model, gen, prep.data, prep.split.old_groups, meta_config(config, seed));
  if (trace) *trace = std::move(result);
  return gen;
}

namespace {

PhaseScores score(const BaseModel& model, const Dataset& data, std::span<const std::size_t> rows, const Tensor& table,
                  Phase phase) {
  std::vector<double> preds;
  std::vector<int> labels;
  std::vector<std::int32_t> ads;
  preds.reserve(rows.size());
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    auto part = rows.subspan(start, std::min(kChunk, rows.size() - start));
    auto p = model.predict_values(make_batch(data, part), &table);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  for (auto r : rows) {
    labels.push_back(data.label(r));
    ads.push_back(data.ad_id(r));
  }
  return {phase, auc(preds, labels), logloss(preds, labels), per_ad_auc(preds, labels, ads)};
}

}  // namespace

std::vector<PhaseScores> evaluate_policy(const ExperimentConfig& config, const PreparedData& prep,
                                         const SplitManifest& manifest, const BaseModel& model,
                                         const Generator* gen, InitPolicy policy, std::uint64_t seed) {
  const std::size_t m = model.embedding_dim();
  Tensor table = model.id_table().value;
  if (policy == InitPolicy::random) {
    Rng rng(derive_seed(seed, "random-init"));
    for (const auto& c : manifest.carves)
      for (double& v : table.row(static_cast<std::size_t>(c.ad_id))) v = normal(rng, 0.0, config.init_stddev);
  } else {
    if (!gen) throw ValidationError("the meta policy needs a generator");
    for (const auto& c : manifest.carves) {
      Tensor phi = gen->generate(model, prep.data, c.batch_a.front());
      std::copy(phi.values().begin(), phi.values().end(), table.row(static_cast<std::size_t>(c.ad_id)).begin());
    }
  }

  std::vector<std::size_t> holdout;
  for (const auto& c : manifest.carves) holdout.insert(holdout.end(), c.holdout.begin(), c.holdout.end());
  if (holdout.empty()) throw ValidationError("no new ads to evaluate");

  std::vector<PhaseScores> out;
  out.push_back(score(model, prep.data, holdout, table, Phase::cold));
  const double lr = config.effective_warmup_lr();
  for (Phase phase : {Phase::warm_a, Phase::warm_b, Phase::warm_c}) {
    for (const auto& c : manifest.carves) {
      const auto& batch = phase == Phase::warm_a ? c.batch_a : phase == Phase::warm_b ? c.batch_b : c.batch_c;
      auto dst = table.row(static_cast<std::size_t>(c.ad_id));
      Tensor row(Shape{1, m}, std::vector<double>(dst.begin(), dst.end()));
      Tensor next = warmup_update(model, c.ad_id, row, prep.data, batch, lr);
      std::copy(next.values().begin(), next.values().end(), dst.begin());
    }
    out.push_back(score(model, prep.data, holdout, table, phase));
  }
  return out;
}

void finalize_report(ExperimentReport& report) {
  std::map<std::pair<ModelVariant, std::uint64_t>, const MetricRow*> anchors;
  for (const auto& r : report.rows) {
    if (r.policy == InitPolicy::random && r.phase == Phase::cold) anchors[{r.model, r.seed}] = &r;
  }
  for (auto& r : report.rows) {
    auto it = anchors.find({r.model, r.seed});
    if (it == anchors.end()) throw ValidationError("report: no random-cold anchor for a model/seed pair");
    r.auc_pct = percentage(r.auc, it->second->auc);
    r.logloss_pct = percentage(r.logloss, it->second->logloss);
  }

  auto mean_std = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    return std::pair{mean, sd};
  };

  std::vector<ModelVariant> models;
  std::vector<InitPolicy> policies;
  std::vector<std::uint64_t> seeds;
  for (const auto& r : report.rows) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    if (std::find(policies.begin(), policies.end(), r.policy) == policies.end()) policies.push_back(r.policy);
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }

  report.summary.clear();
  auto summarize = [&](const std::string& name, const std::vector<ModelVariant>& over, InitPolicy p, Phase ph) {
    std::vector<double> a, l, ap, lp;
    for (auto seed : seeds) {
      double sa = 0, sl = 0, sap = 0, slp = 0;
      std::size_t n = 0;
      for (const auto& r : report.rows) {
        if (r.seed != seed || r.policy != p || r.phase != ph) continue;
        if (std::find(over.begin(), over.end(), r.model) == over.end()) continue;
        sa += r.auc;
        sl += r.logloss;
        sap += r.auc_pct;
        slp += r.logloss_pct;
        ++n;
      }
      if (n == 0) continue;
      const double dn = static_cast<double>(n);
      a.push_back(sa / dn);
      l.push_back(sl / dn);
      ap.push_back(sap / dn);
      lp.push_back(slp / dn);
    }
    if (a.empty()) return;
    SummaryRow s;
    s.model = name;
    s.policy = p;
    s.phase = ph;
    std::tie(s.auc_mean, s.auc_std) = mean_std(a);
    std::tie(s.logloss_mean, s.logloss_std) = mean_std(l);
    s.auc_pct_mean = mean_std(ap).first;
    s.logloss_pct_mean = mean_std(lp).first;
    report.summary.push_back(s);
  };
  for (auto v : models)
    for (auto p : policies)
      for (auto ph : kPhases) summarize(std::string(to_string(v)), {v}, p, ph);
  if (models.size() > 1) {
    for (auto p : policies)
      for (auto ph : kPhases) summarize("average", models, p, ph);
  }
}

// ---------------------------------------------------------------------------
// Output

fs::path OutputPaths::manifest(std::uint64_t seed) const {
  return root / "manifests" / ("split_seed" + std::to_string(seed) + ".json");
}
fs::path OutputPaths::model(ModelVariant v, std::uint64_t seed) const {
  return root / "checkpoints" / (std::string(to_string(v)) + "_seed" + std::to_string(seed) + ".ckpt");
}
fs::path OutputPaths::generator(ModelVariant v, std::uint64_t seed) const {
  return root / "checkpoints" / (std::string(to_string(v)) + "_seed" + std::to_string(seed) + "_generator.ckpt");
}
fs::path OutputPaths::trace(ModelVariant v, std::uint64_t seed) const {
  return root / "traces" / (std::string(to_string(v)) + "_seed" + std::to_string(seed) + ".csv");
}

namespace {

std::string fmt(double v, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

json split_json(const SplitStats& s) {
  return {{"old_ids", s.old_ids},         {"old_samples", s.old_samples},
          {"new_ids", s.new_ids},         {"new_samples", s.new_samples},
          {"discarded_ids", s.discarded_ids}, {"discarded_samples", s.discarded_samples},
          {"total_samples", s.total_samples}};
}

void write_text(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

void update_status(const OutputPaths& paths, const std::string& stage, const std::string& state,
                   const std::string& error = {}) {
  json status;
  if (fs::exists(paths.status())) {
    std::ifstream in(paths.status());
    status = json::parse(in, nullptr, false);
    if (status.is_discarded()) status = json::object();
  }
  status["stages"][stage] = state;
  if (!error.empty()) {
    status["failed_stage"] = stage;
    status["error"] = error;
  } else if (state == "done") {
    status.erase("failed_stage");
    status.erase("error");
  }
  status["complete"] = status["stages"].value("evaluate", "") == "done" && !status.contains("failed_stage");
  write_text(paths.status(), status.dump(2) + "\n");
}

template <class F>
auto run_stage(const OutputPaths& paths, const std::string& stage, F&& body) {
  update_status(paths, stage, "running");
  if (stage != "evaluate") {
    // A fresh upstream stage invalidates any earlier report.
    json status = json::parse(std::ifstream(paths.status()));
    if (status["stages"].contains("evaluate")) {
      status["stages"].erase("evaluate");
      status["complete"] = false;
      write_text(paths.status(), status.dump(2) + "\n");
    }
  }
  try {
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      update_status(paths, stage, "done");
    } else {
      auto result = body();
      update_status(paths, stage, "done");
      return result;
    }
  } catch (const std::exception& e) {
    update_status(paths, stage, "failed", e.what());
    throw StageError(stage, e.what());
  }
}

OutputPaths prepare_output(const ExperimentConfig& config) {
  OutputPaths paths{fs::path(config.output_dir)};
  for (const char* sub : {"manifests", "checkpoints", "traces"}) fs::create_directories(paths.root / sub);
  write_text(paths.config(), to_json(config).dump(2) + "\n");
  return paths;
}

void log_line(const std::string& text) { std::clog << text << std::endl; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void run_pretrain(const ExperimentConfig& config) {
  auto paths = prepare_output(config);
  run_stage(paths, "pretrain", [&] {
    const auto prep = prepare_data(config);
    const auto stats = split_stats(prep.split, prep.data.size());
    log_line("[pretrain] " + std::to_string(stats.old_ids) + " old ads (" + std::to_string(stats.old_samples) +
             " samples), " + std::to_string(stats.new_ids) + " new ads (" + std::to_string(stats.new_samples) +
             " samples)");
    for (auto seed : config.seeds) {
      write_manifest(paths.manifest(seed), make_manifest(prep.data, config.split, seed), prep.data);
      for (auto v : config.models) {
        const auto t0 = std::chrono::steady_clock::now();
        auto model = pretrain_stage(config, prep, v, seed);
        save_model(paths.model(v, seed), model);
        log_line("[pretrain] " + std::string(to_string(v)) + " seed " + std::to_string(seed) + " done in " +
                 fixed(seconds_since(t0), 1) + "s");
      }
    }
  });
}

void run_meta_train(const ExperimentConfig& config) {
  auto paths = prepare_output(config);
  run_stage(paths, "meta-train", [&] {
    const auto prep = prepare_data(config);
    for (auto seed : config.seeds) {
      for (auto v : config.models) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto model = load_model(paths.model(v, seed));
        const auto before = model.checksum();
        MetaTrainResult trace;
        auto gen = meta_stage(config, prep, model, seed, &trace);
        if (model.checksum() != before) throw std::logic_error("base model changed during meta-training");
        save_generator(paths.generator(v, seed), gen, model);

        std::ostringstream csv;
        csv << "epoch,step,ids,mean_l_a,mean_l_b,mean_l_meta,update_norm\n";
        for (const auto& s : trace.steps) {
          double la = 0, lb = 0, lm = 0;
          for (const auto& t : s.ids) {
            la += t.l_a;
            lb += t.l_b;
            lm += t.l_meta;
          }
          const double n = static_cast<double>(s.ids.size());
          csv << s.epoch << ',' << s.step << ',' << s.ids.size() << ',' << fmt(la / n) << ',' << fmt(lb / n) << ','
              << fmt(lm / n) << ',' << fmt(s.update_norm) << '\n';
        }
        write_text(paths.trace(v, seed), csv.str());
        log_line("[meta-train] " + std::string(to_string(v)) + " seed " + std::to_string(seed) + ": " +
                 std::to_string(trace.steps.size()) + " steps, " + std::to_string(trace.samples_used) +
                 " samples in " + fixed(seconds_since(t0), 1) + "s");
      }
    }
  });
}

ExperimentReport run_evaluate(const ExperimentConfig& config) {
  auto paths = prepare_output(config);
  return run_stage(paths, "evaluate", [&] {
    const auto prep = prepare_data(config);
    ExperimentReport report;
    report.dataset = config.name;
    report.split = split_stats(prep.split, prep.data.size());
    for (auto seed : config.seeds) {
      const auto manifest = read_manifest(paths.manifest(seed), prep.data);
      for (auto v : config.models) {
        const auto model = load_model(paths.model(v, seed));
        std::optional<Generator> gen;
        if (std::find(config.policies.begin(), config.policies.end(), InitPolicy::meta) != config.policies.end()) {
          gen = load_generator(paths.generator(v, seed), model);
        }
        for (auto policy : config.policies) {
          auto scores = evaluate_policy(config, prep, manifest, model, gen ? &*gen : nullptr, policy, seed);
          for (const auto& s : scores) {
            report.rows.push_back({config.name, v, policy, s.phase, seed, s.auc, s.logloss, 0.0, 0.0, s.per_ad_auc});
          }
        }
        log_line("[evaluate] " + std::string(to_string(v)) + " seed " + std::to_string(seed) + " done");
      }
    }
    finalize_report(report);
    write_metrics_csv(paths.metrics_csv(), report);
    write_report_json(paths.report_json(), report);
    write_report_text(paths.report_txt(), report, config);
    if (config.svg) write_svg(paths.svg(), report);
    return report;
  });
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  run_pretrain(config);
  run_meta_train(config);
  return run_evaluate(config);
}

void write_metrics_csv(const fs::path& path, const ExperimentReport& report) {
  std::ostringstream out;
  out << "dataset,model,init_policy,phase,seed,auc,logloss,auc_pct,logloss_pct\n";
  for (const auto& r : report.rows) {
    out << r.dataset << ',' << to_string(r.model) << ',' << to_string(r.policy) << ',' << to_string(r.phase) << ','
        << r.seed << ',' << fmt(r.auc) << ',' << fmt(r.logloss) << ',' << fmt(r.auc_pct) << ',' << fmt(r.logloss_pct)
        << '\n';
  }
  write_text(path, out.str());
}

void write_report_json(const fs::path& path, const ExperimentReport& report) {
  json rows = json::array(), summary = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"model", to_string(r.model)},
                    {"init_policy", to_string(r.policy)},
                    {"phase", to_string(r.phase)},
                    {"seed", r.seed},
                    {"auc", r.auc},
                    {"logloss", r.logloss},
                    {"auc_pct", r.auc_pct},
                    {"logloss_pct", r.logloss_pct},
                    {"per_ad_auc", std::isnan(r.per_ad_auc) ? json(nullptr) : json(r.per_ad_auc)}});
  }
  for (const auto& s : report.summary) {
    summary.push_back({{"model", s.model},
                       {"init_policy", to_string(s.policy)},
                       {"phase", to_string(s.phase)},
                       {"auc_mean", s.auc_mean},
                       {"auc_std", s.auc_std},
                       {"logloss_mean", s.logloss_mean},
                       {"logloss_std", s.logloss_std},
                       {"auc_pct_mean", s.auc_pct_mean},
                       {"logloss_pct_mean", s.logloss_pct_mean}});
  }
  json j{{"dataset", report.dataset}, {"split", split_json(report.split)}, {"rows", rows}, {"summary", summary}};
  write_text(path, j.dump(2) + "\n");
}

void write_report_text(const fs::path& path, const ExperimentReport& report, const ExperimentConfig& config) {
  std::ostringstream out;
  const auto& s = report.split;
  out << "dataset " << report.dataset << "\n";
  out << "split N=" << config.split.old_threshold << " N_min=" << config.split.new_min
      << " K=" << config.split.batch_size << "\n";
  out << "  old ads " << s.old_ids << " (" << s.old_samples << " samples)\n";
  out << "  new ads " << s.new_ids << " (" << s.new_samples << " samples)\n";
  out << "  discarded ads " << s.discarded_ids << " (" << s.discarded_samples << " samples)\n";
  out << "m=" << config.embedding_dim << " alpha=" << config.meta.alpha << " a=" << config.meta.inner_lr
      << " b=" << config.meta.outer_lr << " warmup_lr=" << config.effective_warmup_lr() << " seeds=" << config.seeds.size()
      << "\n\n";
  out << std::left << std::setw(10) << "model" << std::setw(8) << "policy" << std::setw(8) << "phase" << std::right
      << std::setw(20) << "AUC" << std::setw(20) << "LogLoss" << std::setw(10) << "AUC%" << std::setw(10)
      << "LogLoss%" << "\n";
  for (const auto& r : report.summary) {
    out << std::left << std::setw(10) << r.model << std::setw(8) << to_string(r.policy) << std::setw(8)
        << to_string(r.phase) << std::right << std::setw(20)
        << (fixed(r.auc_mean, 4) + " +- " + fixed(r.auc_std, 4)) << std::setw(20)
        << (fixed(r.logloss_mean, 4) + " +- " + fixed(r.logloss_std, 4)) << std::setw(10) << fixed(r.auc_pct_mean, 2)
        << std::setw(10) << fixed(r.logloss_pct_mean, 2) << "\n";
  }
  write_text(path, out.str());
}

void write_svg(const fs::path& path, const ExperimentReport& report) {
  // Two panels: AUC% and LogLoss% against the warm-up phase, one line per
  // (model, policy) summary.
  constexpr double kW = 360, kH = 260, kPad = 40;
  std::vector<const SummaryRow*> rows;
  for (const auto& r : report.summary) rows.push_back(&r);
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * kW + 200 << "\" height=\"" << kH + 20
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  for (int panel = 0; panel < 2; ++panel) {
    const double x0 = panel * kW;
    double lo = 0.0, hi = 0.0;
    for (auto* r : rows) {
      const double v = panel == 0 ? r->auc_pct_mean : r->logloss_pct_mean;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo < 1e-9) hi = lo + 1.0;
    auto px = [&](int phase) { return x0 + kPad + phase * (kW - 2 * kPad) / 3.0; };
    auto py = [&](double v) { return kH - kPad - (v - lo) / (hi - lo) * (kH - 2 * kPad); };
    out << "<text x=\"" << x0 + kPad << "\" y=\"16\">" << (panel == 0 ? "AUC %" : "LogLoss %") << "</text>\n";
    out << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(3) << "\" y2=\"" << py(0)
        << "\" stroke=\"#999\" stroke-dasharray=\"3,3\"/>\n";
    for (int ph = 0; ph < 4; ++ph) {
      out << "<text x=\"" << px(ph) - 12 << "\" y=\"" << kH - kPad + 16 << "\">" << to_string(kPhases[ph])
          << "</text>\n";
    }
    out << "<text x=\"" << x0 + 2 << "\" y=\"" << py(hi) << "\">" << fixed(hi, 1) << "</text>\n";
    out << "<text x=\"" << x0 + 2 << "\" y=\"" << py(lo) << "\">" << fixed(lo, 1) << "</text>\n";
    std::size_t line = 0;
    for (std::size_t i = 0; i + 3 < rows.size(); i += 4, ++line) {
      out << "<polyline fill=\"none\" stroke=\"" << colors[line % 8] << "\" stroke-width=\"2\""
          << (rows[i]->policy == InitPolicy::random ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
      for (int ph = 0; ph < 4; ++ph) {
        const double v = panel == 0 ? rows[i + ph]->auc_pct_mean : rows[i + ph]->logloss_pct_mean;
        out << px(ph) << ',' << py(v) << ' ';
      }
      out << "\"/>\n";
      if (panel == 1) {
        out << "<text x=\"" << 2 * kW + 10 << "\" y=\"" << 30 + 14 * line << "\" fill=\"" << colors[line % 8]
            << "\">" << rows[i]->model << " " << to_string(rows[i]->policy) << "</text>\n";
      }
    }
  }
  out << "</svg>\n";
  write_text(path, out.str());
}

}  // namespace metaemb
