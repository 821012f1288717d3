#include "extractlab/training.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace extractlab {

TrainConfig TrainConfig::paper_faithful(Seed seed) {
  TrainConfig c;
  c.seed = seed;
  return c;
}

TrainConfig TrainConfig::desk(Seed seed) {
  TrainConfig c;
  c.max_epochs = 200;
  c.patience = 20;
  c.seed = seed;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw InvalidArgument("adam_epsilon must be positive");
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (max_epochs == 0 || patience == 0) throw InvalidArgument("max_epochs and patience must be positive");
  if (!(l2_lambda >= 0.0)) throw InvalidArgument("l2_lambda must be nonnegative");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout_rate must lie in [0, 1)");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},           {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},   {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},           {"l2_lambda", c.l2_lambda},   {"dropout_rate", c.dropout_rate},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c = TrainConfig::desk();
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.l2_lambda = j.value("l2_lambda", c.l2_lambda);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.seed = j.value("seed", c.seed);
  return c;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, std::size_t t,
               const TrainConfig& config) {
  if (params.size() != grads.size()) throw InvalidArgument("adam_step: parameter/gradient size mismatch");
  if (t == 0) throw InvalidArgument("adam_step: step index starts at 1");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw InvalidArgument("adam_step: optimizer state size mismatch");
  }
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
  }
}

double macro_f1(std::span<const int> predictions, std::span<const int> targets, std::size_t num_classes) {
  if (predictions.size() != targets.size()) throw InvalidArgument("macro_f1: length mismatch");
  if (predictions.empty()) throw InvalidArgument("macro_f1: empty input");
  if (num_classes == 0) throw InvalidArgument("macro_f1: no classes");
  std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0), fn(num_classes, 0.0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto p = static_cast<std::size_t>(predictions[i]);
    const auto t = static_cast<std::size_t>(targets[i]);
    if (p >= num_classes || t >= num_classes) throw InvalidArgument("macro_f1: label out of range");
    if (p == t) {
      tp[p] += 1.0;
    } else {
      fp[p] += 1.0;
      fn[t] += 1.0;
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    total += denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
  }
  return total / static_cast<double>(num_classes);
}

nlohmann::json to_json(const TrainReport& r) {
  return {{"epochs_run", r.epochs_run},
          {"best_epoch", r.best_epoch},
          {"best_valid_f1", r.best_valid_f1},
          {"initial_train_loss", r.initial_train_loss},
          {"final_train_loss", r.final_train_loss}};
}

TrainResult train_network(const LabeledDataset& train, const LabeledDataset& valid, NetworkSpec spec,
                          const TrainConfig& config) {
  config.validate();
  train.validate();
  valid.validate();
  if (train.empty() || valid.empty()) throw InvalidArgument("train_network: empty training or validation set");
  if (train.num_classes() != spec.num_classes || valid.num_classes() != spec.num_classes) {
    throw InvalidArgument("train_network: label arity " + std::to_string(train.num_classes()) +
                          " does not match spec num_classes " + std::to_string(spec.num_classes));
  }
  if (train.dim() != spec.input_dim || valid.dim() != spec.input_dim) {
    throw InvalidArgument("train_network: sample dimension does not match spec");
  }
  spec.dropout_rate = config.dropout_rate;
  spec.l2_lambda = config.l2_lambda;

  Network net = init_network(spec, config.seed);
  Network best = net;
  AdamState adam;
  Rng order_rng(derive_seed(config.seed, 101));
  Rng dropout_rng(derive_seed(config.seed, 102));
  const std::vector<int> valid_labels = valid.labels();

  TrainReport report;
  report.initial_train_loss = loss_ce(forward(net, train.samples), train.targets) + l2_penalty(net);
  double best_f1 = -1.0;

  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      const Matrix xb = select_rows(train.samples, rows);
      const Matrix yb = select_rows(train.targets, rows);
      const ForwardTrace trace = forward_trace(net, xb, true, &dropout_rng);
      epoch_loss += loss_ce(trace.probs, yb) * static_cast<double>(rows.size());
      const std::vector<double> grads = backward(trace, yb);
      adam_step(net.mutable_parameters(), grads, adam, ++step, config);
    }
    report.final_train_loss = epoch_loss / static_cast<double>(n) + l2_penalty(net);
    report.epochs_run = epoch;

    const double f1 = macro_f1(predict_labels(net, valid.samples), valid_labels, spec.num_classes);
    if (f1 > best_f1) {
      best_f1 = f1;
      best = net;
      report.best_epoch = epoch;
    } else if (epoch - report.best_epoch >= config.patience) {
      break;
    }
  }
  report.best_valid_f1 = best_f1;
  return {std::move(best), report};
}

}  // namespace extractlab
