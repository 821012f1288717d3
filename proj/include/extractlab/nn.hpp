#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "extractlab/random.hpp"
#include "extractlab/types.hpp"

namespace extractlab {

// Width presets ordered by capacity: lower, base and higher complexity.
enum class Preset { LC, BC, HC, Custom };

std::string_view to_string(Preset preset);
Preset parse_preset(std::string_view name);
std::vector<std::size_t> preset_widths(Preset preset);

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_widths;
  std::size_t num_classes = 2;
  double dropout_rate = 0.0;
  double l2_lambda = 0.0;
  Preset preset = Preset::Custom;

  static NetworkSpec from_preset(Preset preset, std::size_t input_dim, std::size_t num_classes,
                                 double dropout_rate = 0.0, double l2_lambda = 0.0);

  // Throws InvalidArgument when the spec cannot describe a network.
  void validate() const;

  bool operator==(const NetworkSpec&) const = default;
};

// Fully connected ReLU stack with a softmax head. All parameters live in one
// flat buffer; layer l holds a (fan_out x fan_in) weight block followed by its
// bias, so optimizers and serializers can treat the model as a single vector.
class Network {
 public:
  Network(NetworkSpec spec, Seed seed, std::vector<double> parameters);

  const NetworkSpec& spec() const { return spec_; }
  Seed seed() const { return seed_; }

  std::size_t num_layers() const { return spec_.hidden_widths.size() + 1; }
  std::size_t fan_in(std::size_t layer) const;
  std::size_t fan_out(std::size_t layer) const;

  Eigen::Map<const Matrix> weights(std::size_t layer) const;
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  Eigen::Map<Matrix> mutable_weights(std::size_t layer);
  Eigen::Map<Vector> mutable_bias(std::size_t layer);

  std::span<const double> parameters() const { return params_; }
  // Any mutable access invalidates outstanding forward traces.
  std::span<double> mutable_parameters();
  std::size_t parameter_count() const { return params_.size(); }

  // Changes whenever the parameters may have changed; traces record it.
  std::uint64_t revision() const { return revision_; }

  bool operator==(const Network& other) const {
    return spec_ == other.spec_ && seed_ == other.seed_ && std::equal(params_.begin(), params_.end(), other.params_.begin(), other.params_.end());
  }

 private:
  void touch();

  NetworkSpec spec_;
  Seed seed_ = 0;
  // Aligned so vectorized kernels take the same path on every copy.
  std::vector<double, Eigen::aligned_allocator<double>> params_;
  std::vector<std::size_t> offsets_;
  std::uint64_t revision_ = 0;
};

// Glorot-uniform weights, zero biases. Pure function of (spec, seed).
Network init_network(const NetworkSpec& spec, Seed seed);

// Intermediate values kept by a forward pass so the matching backward pass
// can run without recomputation.
struct ForwardTrace {
  const Network* net = nullptr;
  std::uint64_t revision = 0;
  bool train_mode = false;
  std::vector<Matrix> inputs;       // input to each layer; inputs[0] is the batch
  std::vector<Matrix> pre_relu;     // hidden pre-activations
  std::vector<Matrix> dropout_mask; // scaled keep masks, empty outside train mode
  Matrix logits;
  Matrix probs;
};

inline constexpr double kLogFloor = 1e-12;

Matrix logits(const Network& net, const Matrix& batch);
// Evaluation-mode class probabilities, one row per sample.
Matrix forward(const Network& net, const Matrix& batch);
// Dropout is drawn from `dropout_rng` only when train_mode is set.
ForwardTrace forward_trace(const Network& net, const Matrix& batch, bool train_mode,
                           Rng* dropout_rng = nullptr);

Matrix softmax_rows(const Matrix& logits);

// Mean over rows of -sum_j t_j log(p_j + kLogFloor). Targets may be soft.
double loss_ce(const Matrix& probs, const Matrix& targets);
// Mean over rows of the squared L2 error.
double loss_mse(const Matrix& preds, const Matrix& targets);
// 0.5 * l2_lambda * ||theta||^2, the penalty whose gradient is l2_lambda * theta.
double l2_penalty(const Network& net);

// Gradient of loss_ce(trace.probs, targets) + l2_penalty with respect to the
// flat parameter vector. Throws InvalidArgument if the trace is empty or the
// network changed since it was recorded.
std::vector<double> backward(const ForwardTrace& trace, const Matrix& targets);

// d logit_class / dx, dropout disabled.
Vector input_gradient(const Network& net, const Vector& x, std::size_t class_index);
// Full logit Jacobian, num_classes x input_dim.
Matrix input_jacobian(const Network& net, const Vector& x);

// Row-wise argmax, ties toward the lowest index.
std::vector<int> argmax_rows(const Matrix& rows);
int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row);
std::vector<int> predict_labels(const Network& net, const Matrix& batch);
// One-hot Top-1 predictions.
Matrix predict_top1(const Network& net, const Matrix& batch);
Matrix one_hot(std::span<const int> labels, std::size_t num_classes);

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);

}  // namespace extractlab
