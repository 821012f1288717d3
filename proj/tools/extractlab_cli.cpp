// Experiment harness: train a secret model, run extractions and sweeps,
// print stored reports, or serve a secret model over stdin/stdout.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "extractlab/experiment.hpp"

namespace {

using namespace extractlab;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
  std::string config_path;
  std::optional<std::string> task;
  std::optional<std::string> idx_images;
  std::optional<std::string> idx_labels;
  std::optional<std::string> thief_images;
  std::vector<Seed> seeds;
  std::optional<std::size_t> budget;
  std::optional<std::size_t> iterations;
  std::optional<std::string> strategy;
  std::optional<std::size_t> rho;
  std::optional<std::string> mode;
  std::optional<std::string> secret_arch;
  std::optional<std::string> substitute_arch;
  std::optional<std::string> thief;
  std::optional<std::string> out;
  std::optional<std::string> secret_model;
  std::vector<std::size_t> budgets;
  std::vector<std::string> strategies;
  std::optional<std::size_t> jobs;
  bool paper_faithful = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON experiment configuration");
  cmd->add_option("--task", o.task, "blobs | rings | checkerboard | idx");
  cmd->add_option("--idx-images", o.idx_images, "IDX image file of the secret dataset");
  cmd->add_option("--idx-labels", o.idx_labels, "IDX label file of the secret dataset");
  cmd->add_option("--thief-images", o.thief_images, "IDX image file used as thief pool");
  cmd->add_option("--seed", o.seeds, "replicate seed(s)");
  cmd->add_option("--budget", o.budget, "total query budget B");
  cmd->add_option("--iterations", o.iterations, "iteration count N");
  cmd->add_option("--strategy", o.strategy, "random | uncertainty | kcenter | adversarial | ensemble");
  cmd->add_option("--rho", o.rho, "ensemble shortlist size (default: budget)");
  cmd->add_option("--mode", o.mode, "top1 | softmax");
  cmd->add_option("--secret-arch", o.secret_arch, "LC | BC | HC");
  cmd->add_option("--substitute-arch", o.substitute_arch, "LC | BC | HC");
  cmd->add_option("--thief", o.thief, "natural | noise | idx");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--secret-model", o.secret_model, "secret model file (default OUT/secret_model.json)");
  cmd->add_flag("--paper-faithful", o.paper_faithful, "1000 epochs with patience 100");
}

ExperimentConfig build_config(const Overrides& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(o.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse " + o.config_path + ": " + e.what());
    } catch (const std::runtime_error& e) {
      throw ConfigError(e.what());
    }
    c = experiment_config_from_json(j);
  }
  if (o.paper_faithful) {
    const TrainConfig faithful = TrainConfig::paper_faithful(c.train.seed);
    c.train.max_epochs = faithful.max_epochs;
    c.train.patience = faithful.patience;
  }
  try {
    if (o.task) c.task = *o.task;
    if (o.idx_images) c.idx_images = *o.idx_images;
    if (o.idx_labels) c.idx_labels = *o.idx_labels;
    if (o.thief_images) c.thief_images = *o.thief_images;
    if (!o.seeds.empty()) c.seeds = o.seeds;
    if (o.budget) c.budget = *o.budget;
    if (o.iterations) c.iterations = *o.iterations;
    if (o.strategy) c.strategy = parse_strategy(*o.strategy);
    if (o.rho) c.rho = *o.rho;
    if (o.mode) c.mode = parse_oracle_mode(*o.mode);
    if (o.secret_arch) c.secret_arch = parse_preset(*o.secret_arch);
    if (o.substitute_arch) c.substitute_arch = parse_preset(*o.substitute_arch);
    if (o.thief) c.thief = parse_thief_source(*o.thief);
    if (o.out) c.out_dir = *o.out;
    if (o.secret_model) c.secret_model = *o.secret_model;
    if (!o.budgets.empty()) c.budgets = o.budgets;
    if (!o.strategies.empty()) {
      c.strategies.clear();
      for (const auto& s : o.strategies) c.strategies.push_back(parse_strategy(s));
    }
    if (o.jobs) c.jobs = *o.jobs;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box model extraction with pool-based active learning"};
  app.require_subcommand(1);

  Overrides train_o, extract_o, sweep_o, serve_o;
  auto* train_cmd = app.add_subcommand("train-secret", "train the secret model and write it to OUT");
  add_common(train_cmd, train_o);

  auto* extract_cmd = app.add_subcommand("extract", "run one extraction per replicate seed");
  add_common(extract_cmd, extract_o);

  auto* sweep_cmd = app.add_subcommand("sweep", "run a budgets x strategies x seeds grid");
  add_common(sweep_cmd, sweep_o);
  sweep_cmd->add_option("--budgets", sweep_o.budgets, "budget list");
  sweep_cmd->add_option("--strategies", sweep_o.strategies, "strategy list");
  sweep_cmd->add_option("--jobs", sweep_o.jobs, "parallel cells");

  std::string report_path;
  auto* report_cmd = app.add_subcommand("report", "pretty-print a stored extraction report");
  report_cmd->add_option("file", report_path, "report JSON")->required();

  std::size_t serve_budget = 0;
  auto* serve_cmd = app.add_subcommand("serve-oracle", "answer line-delimited JSON queries on stdin");
  add_common(serve_cmd, serve_o);
  serve_cmd->add_option("--oracle-budget", serve_budget, "query budget")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) {
      const auto result = cmd_train_secret(build_config(train_o));
      std::printf("secret model: test accuracy %.4f, macro-F1 %.4f (%zu epochs)\n", result.test_accuracy,
                  result.test_macro_f1, result.report.epochs_run);
    } else if (*extract_cmd) {
      const ExperimentConfig c = build_config(extract_o);
      for (const auto& r : cmd_extract(c)) {
        std::printf("seed %llu: final agreement %.4f, queries %zu\n",
                    static_cast<unsigned long long>(r.config.master_seed), r.final_agreement, r.queries_consumed);
      }
    } else if (*sweep_cmd) {
      const SweepResult r = cmd_sweep(build_config(sweep_o));
      std::fputs(sweep_csv(r).c_str(), stdout);
    } else if (*report_cmd) {
      std::fputs(format_report(nlohmann::json::parse(read_file(report_path))).c_str(), stdout);
    } else if (*serve_cmd) {
      const ExperimentConfig c = build_config(serve_o);
      SecretOracle oracle(network_from_json(nlohmann::json::parse(read_file(c.secret_model_path()))), c.mode,
                          serve_budget);
      serve_oracle(oracle, std::cin, std::cout);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
