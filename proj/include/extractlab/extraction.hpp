#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "extractlab/data.hpp"
#include "extractlab/nn.hpp"
#include "extractlab/oracle.hpp"
#include "extractlab/strategies.hpp"
#include "extractlab/training.hpp"

namespace extractlab {

// How a total budget B is divided: n_valid validation labels, a seed batch
// of k0, N rounds of k, and a floor-division remainder that is never spent.
struct BudgetPlan {
  std::size_t n_valid = 0;
  std::size_t k0 = 0;
  std::size_t k = 0;
  std::size_t leftover = 0;

  std::size_t spent(std::size_t iterations) const { return n_valid + k0 + iterations * k; }
  bool operator==(const BudgetPlan&) const = default;
};

class InfeasiblePlan : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

BudgetPlan plan_budget(std::size_t budget, std::size_t iterations, double seed_fraction, double validation_fraction);

struct ExtractionConfig {
  std::size_t budget = 0;
  std::size_t iterations = 10;
  double seed_fraction = 0.1;
  double validation_fraction = 0.2;
  StrategyKind strategy = StrategyKind::Random;
  // Ensemble shortlist size; 0 means "use the total budget".
  std::size_t rho = 0;
  OracleMode oracle_mode = OracleMode::Top1;
  NetworkSpec substitute_spec;
  TrainConfig train_config = TrainConfig::desk();
  DeepFoolParams deepfool;
  Seed master_seed = 0;

  std::size_t effective_rho() const { return rho == 0 ? budget : rho; }
  // Throws InvalidArgument (InfeasiblePlan for budget arithmetic).
  void validate() const;
};

nlohmann::json to_json(const ExtractionConfig& config);
ExtractionConfig extraction_config_from_json(const nlohmann::json& j);

struct IterationRecord {
  std::size_t iteration = 0;
  std::size_t labeled_count = 0;
  TrainReport train_report;
  double agreement = 0.0;
};

struct ExtractionReport {
  ExtractionConfig config;
  BudgetPlan plan;
  // Record 0 is the seed-only substitute; record i follows the i-th query round.
  std::vector<IterationRecord> records;
  double final_agreement = 0.0;
  std::size_t queries_consumed = 0;
  // Thief-train indices in labeling order, and the thief-valid indices used.
  std::vector<std::size_t> labeled_indices;
  std::vector<std::size_t> valid_indices;
};

// Fraction of positions where the two label lists agree.
double agreement(std::span<const int> a, std::span<const int> b);

// Runs the budgeted extraction loop. `reference` holds evaluation samples
// labeled with the secret model's Top-1 predictions; agreement is measured on
// it after every training round. The oracle must answer in config.oracle_mode.
ExtractionReport run_extraction(const ExtractionConfig& config, LabelOracle& oracle, const UnlabeledPool& thief,
                                const LabeledDataset& reference);

// The labeled set a random-strategy run ends with, drawn in one batch.
std::vector<std::size_t> random_batch_indices(const ExtractionConfig& config, const UnlabeledPool& thief);

nlohmann::json to_json(const ExtractionReport& report);
// Header iteration,labeled,valid_f1,agreement; LF line endings.
std::string to_csv(const ExtractionReport& report);

// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace extractlab
