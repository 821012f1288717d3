#include "extractlab/extraction.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

namespace extractlab {

namespace {

constexpr std::uint64_t kValidStream = 1;
constexpr std::uint64_t kDrawStream = 2;

// floor() that forgives representation error such as 0.29 * 100 = 28.999...
std::size_t floor_count(double fraction, std::size_t total) {
  const double v = fraction * static_cast<double>(total);
  return static_cast<std::size_t>(std::floor(v + 1e-9 * std::max(1.0, v)));
}

}  // namespace

BudgetPlan plan_budget(std::size_t budget, std::size_t iterations, double seed_fraction, double validation_fraction) {
  if (iterations == 0) throw InfeasiblePlan("iteration count must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw InfeasiblePlan("validation fraction must lie in (0, 1)");
  }
  if (!(seed_fraction > 0.0 && seed_fraction < 1.0 - validation_fraction)) {
    throw InfeasiblePlan("seed fraction must lie in (0, 1 - validation fraction)");
  }
  BudgetPlan plan;
  plan.n_valid = floor_count(validation_fraction, budget);
  plan.k0 = floor_count(seed_fraction, budget);
  if (plan.n_valid + plan.k0 > budget) throw InfeasiblePlan("validation and seed draws exceed the budget");
  const std::size_t rest = budget - plan.n_valid - plan.k0;
  plan.k = rest / iterations;
  plan.leftover = rest - plan.k * iterations;
  if (plan.k < 1) {
    throw InfeasiblePlan("budget " + std::to_string(budget) + " leaves no queries per round over " +
                         std::to_string(iterations) + " iterations");
  }
  if (plan.n_valid == 0 || plan.k0 == 0) throw InfeasiblePlan("budget too small for a validation and seed draw");
  return plan;
}

void ExtractionConfig::validate() const {
  const BudgetPlan plan = plan_budget(budget, iterations, seed_fraction, validation_fraction);
  substitute_spec.validate();
  train_config.validate();
  if (strategy == StrategyKind::Ensemble && effective_rho() < plan.k) {
    throw InvalidArgument("ensemble rho = " + std::to_string(effective_rho()) + " is smaller than k = " +
                          std::to_string(plan.k));
  }
  if (deepfool.max_iter == 0 || !(deepfool.overshoot >= 1.0)) throw InvalidArgument("invalid DeepFool parameters");
}

nlohmann::json to_json(const ExtractionConfig& c) {
  return {{"budget", c.budget},
          {"iterations", c.iterations},
          {"seed_fraction", c.seed_fraction},
          {"validation_fraction", c.validation_fraction},
          {"strategy", std::string(to_string(c.strategy))},
          {"rho", c.effective_rho()},
          {"oracle_mode", std::string(to_string(c.oracle_mode))},
          {"substitute_spec", spec_to_json(c.substitute_spec)},
          {"train_config", to_json(c.train_config)},
          {"deepfool", {{"max_iter", c.deepfool.max_iter}, {"overshoot", c.deepfool.overshoot}}},
          {"master_seed", c.master_seed}};
}

ExtractionConfig extraction_config_from_json(const nlohmann::json& j) {
  ExtractionConfig c;
  c.budget = j.at("budget").get<std::size_t>();
  c.iterations = j.value("iterations", c.iterations);
  c.seed_fraction = j.value("seed_fraction", c.seed_fraction);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.strategy = parse_strategy(j.value("strategy", std::string("random")));
  c.rho = j.value("rho", std::size_t{0});
  c.oracle_mode = parse_oracle_mode(j.value("oracle_mode", std::string("top1")));
  c.substitute_spec = spec_from_json(j.at("substitute_spec"));
  if (j.contains("train_config")) c.train_config = train_config_from_json(j.at("train_config"));
  if (j.contains("deepfool")) {
    c.deepfool.max_iter = j["deepfool"].value("max_iter", c.deepfool.max_iter);
    c.deepfool.overshoot = j["deepfool"].value("overshoot", c.deepfool.overshoot);
  }
  c.master_seed = j.value("master_seed", Seed{0});
  return c;
}

double agreement(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InvalidArgument("agreement: label lists differ in length");
  if (a.empty()) throw InvalidArgument("agreement: empty label lists");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(a.size());
}

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

bool needs_probs(StrategyKind kind) { return kind != StrategyKind::Random; }

}  // namespace

std::vector<std::size_t> random_batch_indices(const ExtractionConfig& config, const UnlabeledPool& thief) {
  const BudgetPlan plan = plan_budget(config.budget, config.iterations, config.seed_fraction, config.validation_fraction);
  const auto all = iota_indices(static_cast<std::size_t>(thief.train.rows()));
  return random_order(all, derive_seed(config.master_seed, kDrawStream), plan.k0 + config.iterations * plan.k);
}

ExtractionReport run_extraction(const ExtractionConfig& config, LabelOracle& oracle, const UnlabeledPool& thief,
                                const LabeledDataset& reference) {
  config.validate();
  const BudgetPlan plan = plan_budget(config.budget, config.iterations, config.seed_fraction, config.validation_fraction);
  const std::size_t n_train = static_cast<std::size_t>(thief.train.rows());
  const std::size_t n_valid_pool = static_cast<std::size_t>(thief.valid.rows());
  if (n_train < plan.k0 + config.iterations * plan.k) {
    throw InvalidArgument("thief train partition has " + std::to_string(n_train) + " samples, plan needs " +
                          std::to_string(plan.k0 + config.iterations * plan.k));
  }
  if (n_valid_pool < plan.n_valid) {
    throw InvalidArgument("thief valid partition has " + std::to_string(n_valid_pool) + " samples, plan needs " +
                          std::to_string(plan.n_valid));
  }
  if (oracle.mode() != config.oracle_mode) throw InvalidArgument("oracle mode differs from configuration");
  if (oracle.remaining() < config.budget) throw InvalidArgument("oracle has less budget remaining than configured");
  if (thief.dim() != config.substitute_spec.input_dim || oracle.input_dim() != thief.dim()) {
    throw InvalidArgument("thief pool dimension does not match the models");
  }
  if (oracle.num_classes() != config.substitute_spec.num_classes) {
    throw InvalidArgument("substitute class count differs from the oracle's");
  }
  if (reference.empty() || reference.dim() != thief.dim()) throw InvalidArgument("invalid reference set");

  const std::size_t consumed_before = oracle.consumed();
  ExtractionReport report;
  report.config = config;
  report.plan = plan;

  // Validation labels, drawn from the thief's held-out partition.
  report.valid_indices = random_order(iota_indices(n_valid_pool), derive_seed(config.master_seed, kValidStream),
                                      plan.n_valid);
  LabeledDataset valid;
  valid.samples = select_rows(thief.valid, report.valid_indices);
  valid.targets = oracle.query(valid.samples);
  valid.fold = Fold::Valid;

  // Seed batch S_0. The random strategy keeps walking this same order.
  const Seed draw_seed = derive_seed(config.master_seed, kDrawStream);
  std::vector<bool> labeled(n_train, false);
  report.labeled_indices = random_order(iota_indices(n_train), draw_seed, plan.k0);
  for (std::size_t idx : report.labeled_indices) labeled[idx] = true;
  LabeledDataset train;
  train.samples = select_rows(thief.train, report.labeled_indices);
  train.targets = oracle.query(train.samples);

  const std::vector<int> reference_labels = reference.labels();

  for (std::size_t i = 0;; ++i) {
    TrainResult trained = train_network(train, valid, config.substitute_spec, config.train_config);
    IterationRecord record;
    record.iteration = i;
    record.labeled_count = train.size();
    record.train_report = trained.report;
    record.agreement = agreement(predict_labels(trained.network, reference.samples), reference_labels);
    report.records.push_back(record);
    if (i == config.iterations) break;

    SelectionContext ctx;
    ctx.substitute = &trained.network;
    for (std::size_t idx = 0; idx < n_train; ++idx) {
      if (!labeled[idx]) ctx.pool_indices.push_back(idx);
    }
    ctx.k = plan.k;
    ctx.rng_seed = draw_seed;
    Matrix pool_samples;
    if (needs_probs(config.strategy)) {
      pool_samples = select_rows(thief.train, ctx.pool_indices);
      ctx.pool_probs = forward(trained.network, pool_samples);
      ctx.center_probs = forward(trained.network, train.samples);
    }
    const std::vector<std::size_t> picked =
        select(config.strategy, ctx, pool_samples, config.effective_rho(), config.deepfool);

    const Matrix queried = select_rows(thief.train, picked);
    const Matrix answers = oracle.query(queried);
    const auto old_rows = train.samples.rows();
    const auto add = static_cast<Eigen::Index>(picked.size());
    train.samples.conservativeResize(old_rows + add, Eigen::NoChange);
    train.targets.conservativeResize(old_rows + add, Eigen::NoChange);
    train.samples.bottomRows(add) = queried;
    train.targets.bottomRows(add) = answers;
    for (std::size_t idx : picked) {
      labeled[idx] = true;
      report.labeled_indices.push_back(idx);
    }
  }

  report.final_agreement = report.records.back().agreement;
  report.queries_consumed = oracle.consumed() - consumed_before;
  return report;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

nlohmann::json to_json(const ExtractionReport& r) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& rec : r.records) {
    records.push_back({{"iteration", rec.iteration},
                       {"labeled", rec.labeled_count},
                       {"agreement", rec.agreement},
                       {"train", to_json(rec.train_report)}});
  }
  return {{"config", to_json(r.config)},
          {"plan", {{"n_valid", r.plan.n_valid}, {"k0", r.plan.k0}, {"k", r.plan.k}, {"leftover", r.plan.leftover}}},
          {"records", std::move(records)},
          {"final_agreement", r.final_agreement},
          {"queries_consumed", r.queries_consumed},
          {"labeled_indices", r.labeled_indices},
          {"valid_indices", r.valid_indices}};
}

std::string to_csv(const ExtractionReport& r) {
  std::string out = "iteration,labeled,valid_f1,agreement\n";
  for (const auto& rec : r.records) {
    out += std::to_string(rec.iteration) + ',' + std::to_string(rec.labeled_count) + ',' +
           format_double(rec.train_report.best_valid_f1) + ',' + format_double(rec.agreement) + '\n';
  }
  return out;
}

}  // namespace extractlab
