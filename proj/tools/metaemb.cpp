// Command-line front end: synth-gen, pretrain, meta-train, evaluate, run-all
// and grad-check. Exit codes: 0 success, 1 validation error, 2 stage failure,
// 3 grad-check failure.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "metaemb/errors.hpp"
#include "metaemb/experiment.hpp"
#include "metaemb/gradcheck.hpp"
#include "metaemb/loaders.hpp"

using namespace metaemb;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kStage = 2;
constexpr int kGradCheck = 3;

struct CommonOptions {
  std::string config_path;
  bool deterministic = false;
};

ExperimentConfig resolve_config(const CommonOptions& opts, const std::vector<std::string>& extras) {
  json file = json::object();
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw ValidationError("cannot open config " + opts.config_path);
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError(opts.config_path + ": " + e.what());
    }
  }
  json j = to_json(config_from_json(file));
  for (const auto& arg : extras) {
    const auto eq = arg.find('=');
    if (arg.rfind("--", 0) != 0 || eq == std::string::npos) {
      throw ValidationError("unexpected argument '" + arg + "' (overrides take the form --key=value)");
    }
    apply_override(j, arg.substr(2, eq - 2), arg.substr(eq + 1));
  }
  auto config = config_from_json(j);
  if (opts.deterministic) config.threads = 1;
  config.validate();
  return config;
}

void print_report(const ExperimentReport& report) {
  for (const auto& s : report.summary) {
    std::printf("%-9s %-7s %-7s auc %.4f (%+.2f%%)  logloss %.4f (%+.2f%%)\n", s.model.c_str(),
                std::string(to_string(s.policy)).c_str(), std::string(to_string(s.phase)).c_str(), s.auc_mean,
                s.auc_pct_mean, s.logloss_mean, s.logloss_pct_mean);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-Embedding cold-start experiments"};
  app.require_subcommand(1);

  CommonOptions opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opts.config_path, "experiment config JSON");
    sub->add_flag("--deterministic", opts.deterministic, "single-threaded, bitwise reproducible");
    sub->allow_extras();
  };

  auto* synth = app.add_subcommand("synth-gen", "write the configured synthetic dataset as CSV + schema");
  std::string csv_out = "synthetic.csv", schema_out = "synthetic.schema.json";
  add_common(synth);
  synth->add_option("--csv", csv_out, "output CSV path");
  synth->add_option("--schema", schema_out, "output schema JSON path");

  auto* pre = app.add_subcommand("pretrain", "pre-train base models on old ads and write split manifests");
  auto* meta = app.add_subcommand("meta-train", "train generators against saved base models");
  auto* eval = app.add_subcommand("evaluate", "cold-start and warm-up evaluation, reports");
  auto* all = app.add_subcommand("run-all", "pretrain, meta-train and evaluate");
  for (auto* sub : {pre, meta, eval, all}) add_common(sub);

  auto* gc = app.add_subcommand("grad-check", "finite-difference checks of all gradients");
  GradCheckConfig gcc;
  std::string fault;
  gc->add_option("--dim", gcc.embedding_dim, "embedding dimension");
  gc->add_option("--batch", gcc.batch_size, "meta batch size K");
  gc->add_option("--instances", gcc.instances, "first-order checks per model");
  gc->add_option("--configs", gcc.meta_configs, "meta-gradient configurations");
  gc->add_option("--tolerance", gcc.tolerance, "maximum relative error");
  gc->add_option("--seed", gcc.seed, "seed");
  gc->add_option("--inject-fault", fault, "corrupt the derivative of one primitive (e.g. tanh)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (gc->parsed()) {
      if (!fault.empty()) {
        gcc.fault = parse_op_kind(fault);
        if (!gcc.fault) throw ValidationError("unknown primitive '" + fault + "'");
      }
      const auto report = grad_check(gcc);
      std::printf("grad-check over %zu parameters (tolerance %g)\n", report.parameters, gcc.tolerance);
      for (const auto& s : report.suites) {
        std::printf("  %-22s checks %3zu  max rel error %.3e  %s\n", s.name.c_str(), s.checks, s.max_rel_error,
                    s.pass ? "ok" : "FAIL");
      }
      return report.pass() ? kOk : kGradCheck;
    }

    CLI::App* active = nullptr;
    for (auto* sub : {synth, pre, meta, eval, all}) {
      if (sub->parsed()) active = sub;
    }
    const auto config = resolve_config(opts, active->remaining());

    if (active == synth) {
      if (config.dataset.kind != "synthetic") throw ValidationError("synth-gen needs dataset.kind = synthetic");
      write_csv_dataset(load_dataset(config.dataset), csv_out, schema_out);
      std::printf("wrote %s and %s\n", csv_out.c_str(), schema_out.c_str());
    } else if (active == pre) {
      run_pretrain(config);
    } else if (active == meta) {
      run_meta_train(config);
    } else if (active == eval) {
      print_report(run_evaluate(config));
    } else {
      print_report(run_experiment(config));
    }
    return kOk;
  } catch (const StageError& e) {
    std::fprintf(stderr, "error in stage %s\n", e.what());
    return kStage;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return kValidation;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kStage;
  }
}
