#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "extractlab/data.hpp"
#include "extractlab/extraction.hpp"

namespace extractlab {

// Configuration problems detected before any work starts (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskSource { Synthetic, Idx };
enum class ThiefSource { Natural, Noise, Idx };

std::string_view to_string(ThiefSource source);
ThiefSource parse_thief_source(std::string_view name);

struct ExperimentConfig {
  // Secret task.
  std::string task = "rings";  // blobs | rings | checkerboard | idx
  std::size_t num_classes = 2; // blobs only
  std::size_t secret_train = 4000;
  std::size_t secret_valid = 1000;
  std::size_t secret_test = 2000;
  double task_noise = 0.05;
  Seed task_seed = 1;
  std::filesystem::path idx_images;
  std::filesystem::path idx_labels;

  Preset secret_arch = Preset::BC;
  Preset substitute_arch = Preset::BC;
  Seed secret_seed = 0;

  // Thief pool.
  ThiefSource thief = ThiefSource::Natural;
  std::filesystem::path thief_images;
  std::size_t thief_train = 8000;
  std::size_t thief_valid = 2000;
  Seed thief_seed = 7;

  // Extraction.
  std::size_t budget = 2000;
  std::size_t iterations = 10;
  double seed_fraction = 0.1;
  double validation_fraction = 0.2;
  StrategyKind strategy = StrategyKind::Random;
  std::size_t rho = 0;
  OracleMode mode = OracleMode::Top1;
  TrainConfig train = TrainConfig::desk();
  std::vector<Seed> seeds = {1};

  // Sweep grid; empty lists fall back to the single budget/strategy above.
  std::vector<std::size_t> budgets;
  std::vector<StrategyKind> strategies;
  std::size_t jobs = 1;

  std::filesystem::path out_dir = "out";
  std::filesystem::path secret_model;  // defaults to out_dir/secret_model.json

  TaskSource task_source() const { return task == "idx" ? TaskSource::Idx : TaskSource::Synthetic; }
  std::filesystem::path secret_model_path() const;
  // Throws ConfigError.
  void validate() const;
};

// Unknown keys are rejected so typos surface as config errors.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);

// Secret-task folds for the configured task (synthetic or IDX file split).
SyntheticFolds load_secret_task(const ExperimentConfig& config);
UnlabeledPool load_thief_pool(const ExperimentConfig& config, std::size_t input_dim);
ExtractionConfig make_extraction_config(const ExperimentConfig& config, std::size_t budget, StrategyKind strategy,
                                        Seed seed, std::size_t input_dim, std::size_t num_classes);

struct SecretTrainingResult {
  Network model;
  TrainReport report;
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
};

SecretTrainingResult train_secret(const ExperimentConfig& config);
// Writes secret_model.json and secret_metrics.json.
SecretTrainingResult cmd_train_secret(const ExperimentConfig& config);

std::filesystem::path report_stem(const std::filesystem::path& dir, StrategyKind strategy, std::size_t budget,
                                  Seed seed);
// One JSON + CSV report per replicate seed.
std::vector<ExtractionReport> cmd_extract(const ExperimentConfig& config);

struct SweepCell {
  std::size_t budget = 0;
  StrategyKind strategy = StrategyKind::Random;
  Seed seed = 0;
  double final_agreement = 0.0;
  std::size_t queries_consumed = 0;
};

struct SweepResult {
  std::vector<std::size_t> budgets;
  std::vector<StrategyKind> strategies;
  std::vector<Seed> seeds;
  std::vector<SweepCell> cells;
  // mean[strategy index][budget index] over seeds
  std::vector<std::vector<double>> mean;
};

SweepResult run_sweep(const ExperimentConfig& config);
// Writes sweep.csv (strategies x budgets) and sweep.json.
SweepResult cmd_sweep(const ExperimentConfig& config);
std::string sweep_csv(const SweepResult& result);
nlohmann::json to_json(const SweepResult& result);

// Human-readable summary of a stored extraction report.
std::string format_report(const nlohmann::json& report);

void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace extractlab
