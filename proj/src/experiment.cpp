#include "extractlab/experiment.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace extractlab {

namespace fs = std::filesystem;

std::string_view to_string(ThiefSource source) {
  switch (source) {
    case ThiefSource::Natural: return "natural";
    case ThiefSource::Noise: return "noise";
    case ThiefSource::Idx: return "idx";
  }
  return "natural";
}

ThiefSource parse_thief_source(std::string_view name) {
  if (name == "natural") return ThiefSource::Natural;
  if (name == "noise") return ThiefSource::Noise;
  if (name == "idx") return ThiefSource::Idx;
  throw ConfigError("unknown thief source '" + std::string(name) + "'");
}

fs::path ExperimentConfig::secret_model_path() const {
  return secret_model.empty() ? out_dir / "secret_model.json" : secret_model;
}

namespace {

std::vector<std::size_t> budget_list(const ExperimentConfig& c) {
  return c.budgets.empty() ? std::vector<std::size_t>{c.budget} : c.budgets;
}

std::vector<StrategyKind> strategy_list(const ExperimentConfig& c) {
  return c.strategies.empty() ? std::vector<StrategyKind>{c.strategy} : c.strategies;
}

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string(what) + " path is required");
  if (!fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

}  // namespace

void ExperimentConfig::validate() const {
  if (task == "idx") {
    require_file(idx_images, "idx_images");
    require_file(idx_labels, "idx_labels");
  } else {
    try {
      SyntheticTaskSpec spec{parse_task_kind(task), num_classes, secret_train, secret_valid, secret_test, task_noise,
                             task_seed};
      spec.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  if (thief == ThiefSource::Idx || (thief == ThiefSource::Natural && task == "idx")) {
    require_file(thief_images, "thief_images");
  }
  if (thief != ThiefSource::Idx && (thief_train == 0 || thief_valid == 0)) {
    throw ConfigError("thief partitions must be nonempty");
  }
  if (seeds.empty()) throw ConfigError("at least one replicate seed is required");
  if (jobs == 0) throw ConfigError("jobs must be positive");
  try {
    train.validate();
    for (std::size_t b : budget_list(*this)) {
      const BudgetPlan plan = plan_budget(b, iterations, seed_fraction, validation_fraction);
      for (StrategyKind s : strategy_list(*this)) {
        const std::size_t r = rho == 0 ? b : rho;
        if (s == StrategyKind::Ensemble && r < plan.k) {
          throw ConfigError("ensemble rho = " + std::to_string(r) + " is smaller than k = " + std::to_string(plan.k) +
                            " at budget " + std::to_string(b));
        }
      }
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

namespace {

void apply_train_overrides(TrainConfig& t, const nlohmann::json& j) {
  static const std::set<std::string> known = {"learning_rate", "beta1",     "beta2",     "adam_epsilon",
                                              "batch_size",    "max_epochs", "patience", "l2_lambda",
                                              "dropout_rate",  "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown train option '" + key + "'");
  }
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_epsilon = j.value("adam_epsilon", t.adam_epsilon);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.patience = j.value("patience", t.patience);
  t.l2_lambda = j.value("l2_lambda", t.l2_lambda);
  t.dropout_rate = j.value("dropout_rate", t.dropout_rate);
  t.seed = j.value("seed", t.seed);
}

}  // namespace

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "task",         "num_classes",     "secret_train",  "secret_valid",  "secret_test",   "task_noise",
      "task_seed",    "idx_images",      "idx_labels",    "secret_arch",   "substitute_arch", "secret_seed",
      "thief",        "thief_images",    "thief_train",   "thief_valid",   "thief_seed",    "budget",
      "iterations",   "seed_fraction",   "validation_fraction", "strategy", "rho",          "mode",
      "train",        "paper_faithful",  "seeds",         "budgets",       "strategies",    "jobs",
      "out_dir",      "secret_model"};
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown configuration key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    c.task = j.value("task", c.task);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.secret_train = j.value("secret_train", c.secret_train);
    c.secret_valid = j.value("secret_valid", c.secret_valid);
    c.secret_test = j.value("secret_test", c.secret_test);
    c.task_noise = j.value("task_noise", c.task_noise);
    c.task_seed = j.value("task_seed", c.task_seed);
    c.idx_images = j.value("idx_images", std::string());
    c.idx_labels = j.value("idx_labels", std::string());
    c.secret_arch = parse_preset(j.value("secret_arch", std::string("BC")));
    c.substitute_arch = parse_preset(j.value("substitute_arch", std::string("BC")));
    c.secret_seed = j.value("secret_seed", c.secret_seed);
    c.thief = parse_thief_source(j.value("thief", std::string("natural")));
    c.thief_images = j.value("thief_images", std::string());
    c.thief_train = j.value("thief_train", c.thief_train);
    c.thief_valid = j.value("thief_valid", c.thief_valid);
    c.thief_seed = j.value("thief_seed", c.thief_seed);
    c.budget = j.value("budget", c.budget);
    c.iterations = j.value("iterations", c.iterations);
    c.seed_fraction = j.value("seed_fraction", c.seed_fraction);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.strategy = parse_strategy(j.value("strategy", std::string("random")));
    c.rho = j.value("rho", c.rho);
    c.mode = parse_oracle_mode(j.value("mode", std::string("top1")));
    if (j.value("paper_faithful", false)) c.train = TrainConfig::paper_faithful();
    if (j.contains("train")) apply_train_overrides(c.train, j.at("train"));
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<Seed>>();
    if (j.contains("budgets")) c.budgets = j.at("budgets").get<std::vector<std::size_t>>();
    if (j.contains("strategies")) {
      for (const auto& s : j.at("strategies")) c.strategies.push_back(parse_strategy(s.get<std::string>()));
    }
    c.jobs = j.value("jobs", c.jobs);
    c.out_dir = j.value("out_dir", c.out_dir.string());
    c.secret_model = j.value("secret_model", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad configuration value: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json strategies = nlohmann::json::array();
  for (auto s : c.strategies) strategies.push_back(std::string(to_string(s)));
  return {{"task", c.task},
          {"num_classes", c.num_classes},
          {"secret_train", c.secret_train},
          {"secret_valid", c.secret_valid},
          {"secret_test", c.secret_test},
          {"task_noise", c.task_noise},
          {"task_seed", c.task_seed},
          {"idx_images", c.idx_images.string()},
          {"idx_labels", c.idx_labels.string()},
          {"secret_arch", std::string(to_string(c.secret_arch))},
          {"substitute_arch", std::string(to_string(c.substitute_arch))},
          {"secret_seed", c.secret_seed},
          {"thief", std::string(to_string(c.thief))},
          {"thief_images", c.thief_images.string()},
          {"thief_train", c.thief_train},
          {"thief_valid", c.thief_valid},
          {"thief_seed", c.thief_seed},
          {"budget", c.budget},
          {"iterations", c.iterations},
          {"seed_fraction", c.seed_fraction},
          {"validation_fraction", c.validation_fraction},
          {"strategy", std::string(to_string(c.strategy))},
          {"rho", c.rho},
          {"mode", std::string(to_string(c.mode))},
          {"train", to_json(c.train)},
          {"seeds", c.seeds},
          {"budgets", c.budgets},
          {"strategies", std::move(strategies)},
          {"jobs", c.jobs},
          {"out_dir", c.out_dir.string()},
          {"secret_model", c.secret_model.string()}};
}

SyntheticFolds load_secret_task(const ExperimentConfig& c) {
  if (c.task_source() == TaskSource::Synthetic) {
    return gen_synthetic(
        {parse_task_kind(c.task), c.num_classes, c.secret_train, c.secret_valid, c.secret_test, c.task_noise, c.task_seed});
  }
  const LabeledDataset all = load_idx(c.idx_images, c.idx_labels);
  const std::vector<double> fractions = {0.64, 0.16, 0.2};
  auto folds = split(all, fractions, c.task_seed);
  folds[0].fold = Fold::Train;
  folds[1].fold = Fold::Valid;
  folds[2].fold = Fold::Test;
  return {std::move(folds[0]), std::move(folds[1]), std::move(folds[2])};
}

UnlabeledPool load_thief_pool(const ExperimentConfig& c, std::size_t input_dim) {
  const bool from_file = c.thief == ThiefSource::Idx || (c.thief == ThiefSource::Natural && c.task == "idx");
  if (from_file) {
    const Matrix images = load_idx_images(c.thief_images);
    if (static_cast<std::size_t>(images.cols()) != input_dim) {
      throw ConfigError("thief images have dimension " + std::to_string(images.cols()) + ", secret model expects " +
                        std::to_string(input_dim));
    }
    const std::vector<double> fractions = {0.8, 0.2};
    auto parts = split_rows(images, fractions, c.thief_seed);
    return {std::move(parts[0]), std::move(parts[1]), PoolProvenance::IdxFile};
  }
  const Bounds bounds =
      c.task_source() == TaskSource::Idx ? Bounds::cube(input_dim, 0.0, 1.0) : task_bounds(parse_task_kind(c.task));
  if (static_cast<std::size_t>(bounds.lo.size()) != input_dim) throw ConfigError("thief bounds dimension mismatch");
  return gen_thief_pool(bounds, c.thief_train, c.thief_valid,
                        c.thief == ThiefSource::Noise ? ThiefMode::Noise : ThiefMode::Natural, c.thief_seed);
}

ExtractionConfig make_extraction_config(const ExperimentConfig& c, std::size_t budget, StrategyKind strategy,
                                        Seed seed, std::size_t input_dim, std::size_t num_classes) {
  ExtractionConfig e;
  e.budget = budget;
  e.iterations = c.iterations;
  e.seed_fraction = c.seed_fraction;
  e.validation_fraction = c.validation_fraction;
  e.strategy = strategy;
  e.rho = c.rho;
  e.oracle_mode = c.mode;
  e.substitute_spec =
      NetworkSpec::from_preset(c.substitute_arch, input_dim, num_classes, c.train.dropout_rate, c.train.l2_lambda);
  e.train_config = c.train;
  e.train_config.seed = seed;
  e.master_seed = seed;
  return e;
}

SecretTrainingResult train_secret(const ExperimentConfig& c) {
  c.validate();
  const SyntheticFolds folds = load_secret_task(c);
  TrainConfig tc = c.train;
  tc.seed = c.secret_seed;
  const NetworkSpec spec =
      NetworkSpec::from_preset(c.secret_arch, folds.train.dim(), folds.train.num_classes(), tc.dropout_rate, tc.l2_lambda);
  TrainResult trained = train_network(folds.train, folds.valid, spec, tc);
  const std::vector<int> predicted = predict_labels(trained.network, folds.test.samples);
  const std::vector<int> truth = folds.test.labels();
  SecretTrainingResult result{std::move(trained.network), trained.report, 0.0, 0.0};
  result.test_accuracy = agreement(predicted, truth);
  result.test_macro_f1 = macro_f1(predicted, truth, folds.test.num_classes());
  return result;
}

SecretTrainingResult cmd_train_secret(const ExperimentConfig& c) {
  SecretTrainingResult result = train_secret(c);
  fs::create_directories(c.out_dir);
  write_file_atomic(c.secret_model_path(), to_json(result.model).dump() + "\n");
  const nlohmann::json metrics = {{"test_accuracy", result.test_accuracy},
                                  {"test_macro_f1", result.test_macro_f1},
                                  {"train", to_json(result.report)},
                                  {"config", to_json(c)}};
  write_file_atomic(c.out_dir / "secret_metrics.json", metrics.dump(2) + "\n");
  return result;
}

namespace {

struct PreparedRun {
  Network secret;
  LabeledDataset reference;
  UnlabeledPool thief;
};

PreparedRun prepare(const ExperimentConfig& c) {
  c.validate();
  const fs::path model_path = c.secret_model_path();
  if (!fs::exists(model_path)) throw ConfigError("secret model not found: " + model_path.string());
  Network secret = network_from_json(nlohmann::json::parse(read_file(model_path)));
  SyntheticFolds folds = load_secret_task(c);
  if (folds.test.dim() != secret.spec().input_dim) throw ConfigError("secret model does not match the task dimension");
  LabeledDataset reference{folds.test.samples, predict_top1(secret, folds.test.samples), Fold::Test};
  UnlabeledPool thief = load_thief_pool(c, secret.spec().input_dim);
  return {std::move(secret), std::move(reference), std::move(thief)};
}

void check_pool(const ExperimentConfig& c, const UnlabeledPool& thief, std::size_t budget) {
  const BudgetPlan plan = plan_budget(budget, c.iterations, c.seed_fraction, c.validation_fraction);
  if (static_cast<std::size_t>(thief.train.rows()) < plan.k0 + c.iterations * plan.k ||
      static_cast<std::size_t>(thief.valid.rows()) < plan.n_valid) {
    throw ConfigError("thief pool too small for budget " + std::to_string(budget));
  }
}

ExtractionReport run_cell(const ExperimentConfig& c, const PreparedRun& prepared, std::size_t budget,
                          StrategyKind strategy, Seed seed) {
  const ExtractionConfig ec = make_extraction_config(c, budget, strategy, seed, prepared.secret.spec().input_dim,
                                                     prepared.secret.spec().num_classes);
  SecretOracle oracle(prepared.secret, c.mode, budget);
  return run_extraction(ec, oracle, prepared.thief, prepared.reference);
}

}  // namespace

fs::path report_stem(const fs::path& dir, StrategyKind strategy, std::size_t budget, Seed seed) {
  return dir / ("report_" + std::string(to_string(strategy)) + "_B" + std::to_string(budget) + "_s" +
                std::to_string(seed));
}

std::vector<ExtractionReport> cmd_extract(const ExperimentConfig& c) {
  const PreparedRun prepared = prepare(c);
  check_pool(c, prepared.thief, c.budget);
  fs::create_directories(c.out_dir);
  std::vector<ExtractionReport> reports;
  std::string failures;
  for (Seed seed : c.seeds) {
    try {
      ExtractionReport r = run_cell(c, prepared, c.budget, c.strategy, seed);
      const fs::path stem = report_stem(c.out_dir, c.strategy, c.budget, seed);
      write_file_atomic(stem.string() + ".json", to_json(r).dump(2) + "\n");
      write_file_atomic(stem.string() + ".csv", to_csv(r));
      reports.push_back(std::move(r));
    } catch (const std::exception& e) {
      failures += "seed " + std::to_string(seed) + ": " + e.what() + "\n";
    }
  }
  if (!failures.empty()) throw std::runtime_error("extraction failed:\n" + failures);
  return reports;
}

SweepResult run_sweep(const ExperimentConfig& c) {
  const PreparedRun prepared = prepare(c);
  SweepResult result;
  result.budgets = budget_list(c);
  result.strategies = strategy_list(c);
  result.seeds = c.seeds;
  for (std::size_t b : result.budgets) check_pool(c, prepared.thief, b);

  for (StrategyKind s : result.strategies) {
    for (std::size_t b : result.budgets) {
      for (Seed seed : result.seeds) result.cells.push_back({b, s, seed, 0.0, 0});
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::string failures;
  auto worker = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) {
      SweepCell& cell = result.cells[i];
      try {
        const ExtractionReport r = run_cell(c, prepared, cell.budget, cell.strategy, cell.seed);
        cell.final_agreement = r.final_agreement;
        cell.queries_consumed = r.queries_consumed;
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        failures += std::string(to_string(cell.strategy)) + "/B" + std::to_string(cell.budget) + "/s" +
                    std::to_string(cell.seed) + ": " + e.what() + "\n";
      }
    }
  };
  const std::size_t workers = std::min(c.jobs, result.cells.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (!failures.empty()) throw std::runtime_error("sweep failed:\n" + failures);

  std::size_t cursor = 0;
  for (std::size_t si = 0; si < result.strategies.size(); ++si) {
    result.mean.emplace_back();
    for (std::size_t bi = 0; bi < result.budgets.size(); ++bi) {
      double sum = 0.0;
      for (std::size_t k = 0; k < result.seeds.size(); ++k) sum += result.cells[cursor++].final_agreement;
      result.mean[si].push_back(sum / static_cast<double>(result.seeds.size()));
    }
  }
  return result;
}

std::string sweep_csv(const SweepResult& r) {
  std::string out = "strategy";
  for (std::size_t b : r.budgets) out += "," + std::to_string(b);
  out += "\n";
  for (std::size_t si = 0; si < r.strategies.size(); ++si) {
    out += std::string(to_string(r.strategies[si]));
    for (double m : r.mean[si]) out += "," + format_double(m);
    out += "\n";
  }
  return out;
}

nlohmann::json to_json(const SweepResult& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"budget", c.budget},
                     {"strategy", std::string(to_string(c.strategy))},
                     {"seed", c.seed},
                     {"final_agreement", c.final_agreement},
                     {"queries_consumed", c.queries_consumed}});
  }
  nlohmann::json strategies = nlohmann::json::array();
  for (auto s : r.strategies) strategies.push_back(std::string(to_string(s)));
  return {{"budgets", r.budgets}, {"strategies", strategies}, {"seeds", r.seeds}, {"cells", cells}, {"mean", r.mean}};
}

SweepResult cmd_sweep(const ExperimentConfig& c) {
  SweepResult r = run_sweep(c);
  fs::create_directories(c.out_dir);
  write_file_atomic(c.out_dir / "sweep.csv", sweep_csv(r));
  write_file_atomic(c.out_dir / "sweep.json", to_json(r).dump(2) + "\n");
  return r;
}

std::string format_report(const nlohmann::json& report) {
  std::ostringstream out;
  const auto& cfg = report.at("config");
  const auto& plan = report.at("plan");
  out << "strategy " << cfg.at("strategy").get<std::string>() << ", mode " << cfg.at("oracle_mode").get<std::string>()
      << ", budget " << cfg.at("budget") << ", iterations " << cfg.at("iterations") << ", seed "
      << cfg.at("master_seed") << "\n";
  out << "plan: n_valid " << plan.at("n_valid") << ", k0 " << plan.at("k0") << ", k " << plan.at("k")
      << ", leftover " << plan.at("leftover") << "\n";
  out << "iteration  labeled  valid_f1  agreement\n";
  for (const auto& rec : report.at("records")) {
    char line[128];
    std::snprintf(line, sizeof(line), "%9d  %7d  %8.4f  %9.4f\n", rec.at("iteration").get<int>(),
                  rec.at("labeled").get<int>(), rec.at("train").at("best_valid_f1").get<double>(),
                  rec.at("agreement").get<double>());
    out << line;
  }
  out << "final agreement " << format_double(report.at("final_agreement").get<double>()) << ", queries "
      << report.at("queries_consumed") << "\n";
  return out.str();
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace extractlab
