#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

#include "extractlab/data.hpp"
#include "extractlab/nn.hpp"

namespace extractlab {

struct TrainConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 150;
  std::size_t max_epochs = 1000;
  std::size_t patience = 100;
  double l2_lambda = 0.001;
  double dropout_rate = 0.1;
  Seed seed = 0;

  // The full-length schedule: 1000 epochs, patience 100.
  static TrainConfig paper_faithful(Seed seed = 0);
  // Same optimizer, shortened to 200 epochs with patience 20.
  static TrainConfig desk(Seed seed = 0);

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

// One bias-corrected Adam update at step t (t >= 1). State vectors are
// zero-initialized on first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, std::size_t t,
               const TrainConfig& config);

// Unweighted mean of per-class F1 over classes 0..num_classes-1. A class with
// no true positives, false positives or false negatives scores 0.
double macro_f1(std::span<const int> predictions, std::span<const int> targets, std::size_t num_classes);

struct TrainReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_valid_f1 = 0.0;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
};

nlohmann::json to_json(const TrainReport& report);

struct TrainResult {
  Network network;
  TrainReport report;
};

// Trains from init_network(spec, config.seed) with minibatch Adam on the
// cross-entropy loss (soft targets allowed) and returns the snapshot with the
// best validation macro-F1. The spec's dropout and L2 settings are replaced
// by the config's. Stops after `patience` epochs without improvement.
TrainResult train_network(const LabeledDataset& train, const LabeledDataset& valid, NetworkSpec spec,
                          const TrainConfig& config);

}  // namespace extractlab
