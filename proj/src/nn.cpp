#include "extractlab/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

namespace extractlab {

namespace {

std::atomic<std::uint64_t> g_revision{1};

std::uint64_t next_revision() { return g_revision.fetch_add(1, std::memory_order_relaxed); }

std::size_t layer_width(const NetworkSpec& spec, std::size_t i) {
  // i indexes the chain input_dim, hidden..., num_classes
  if (i == 0) return spec.input_dim;
  if (i <= spec.hidden_widths.size()) return spec.hidden_widths[i - 1];
  return spec.num_classes;
}

void check_batch(const Network& net, const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != net.spec().input_dim) {
    throw InvalidArgument("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                          std::to_string(net.spec().input_dim));
  }
}

}  // namespace

std::string_view to_string(Preset preset) {
  switch (preset) {
    case Preset::LC: return "LC";
    case Preset::BC: return "BC";
    case Preset::HC: return "HC";
    case Preset::Custom: return "custom";
  }
  return "custom";
}

Preset parse_preset(std::string_view name) {
  if (name == "LC") return Preset::LC;
  if (name == "BC") return Preset::BC;
  if (name == "HC") return Preset::HC;
  if (name == "custom") return Preset::Custom;
  throw InvalidArgument("unknown architecture preset '" + std::string(name) + "'");
}

std::vector<std::size_t> preset_widths(Preset preset) {
  switch (preset) {
    case Preset::LC: return {64, 64};
    case Preset::BC: return {128, 128, 128};
    case Preset::HC: return {256, 256, 256, 256};
    case Preset::Custom: break;
  }
  throw InvalidArgument("custom preset has no fixed widths");
}

NetworkSpec NetworkSpec::from_preset(Preset preset, std::size_t input_dim, std::size_t num_classes,
                                     double dropout_rate, double l2_lambda) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.hidden_widths = preset_widths(preset);
  spec.num_classes = num_classes;
  spec.dropout_rate = dropout_rate;
  spec.l2_lambda = l2_lambda;
  spec.preset = preset;
  return spec;
}

void NetworkSpec::validate() const {
  if (input_dim == 0) throw InvalidArgument("input_dim must be positive");
  if (num_classes < 2) throw InvalidArgument("num_classes must be at least 2");
  if (hidden_widths.empty()) throw InvalidArgument("hidden_widths must not be empty");
  for (auto w : hidden_widths) {
    if (w == 0) throw InvalidArgument("hidden widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout_rate must lie in [0, 1)");
  if (!(l2_lambda >= 0.0)) throw InvalidArgument("l2_lambda must be nonnegative");
  if (preset != Preset::Custom && hidden_widths != preset_widths(preset)) {
    throw InvalidArgument("hidden widths do not match preset " + std::string(to_string(preset)));
  }
}

Network::Network(NetworkSpec spec, Seed seed, std::vector<double> parameters)
    : spec_(std::move(spec)), seed_(seed), params_(parameters.begin(), parameters.end()) {
  spec_.validate();
  std::size_t offset = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    offsets_.push_back(offset);
    offset += fan_out(l) * fan_in(l) + fan_out(l);
  }
  if (offset != params_.size()) {
    throw InvalidArgument("parameter buffer has " + std::to_string(params_.size()) + " entries, spec needs " +
                          std::to_string(offset));
  }
  for (double p : params_) {
    if (!std::isfinite(p)) throw InvalidArgument("non-finite network parameter");
  }
  revision_ = next_revision();
}

std::size_t Network::fan_in(std::size_t layer) const { return layer_width(spec_, layer); }
std::size_t Network::fan_out(std::size_t layer) const { return layer_width(spec_, layer + 1); }

Eigen::Map<const Matrix> Network::weights(std::size_t layer) const {
  return {params_.data() + offsets_[layer], static_cast<Eigen::Index>(fan_out(layer)),
          static_cast<Eigen::Index>(fan_in(layer))};
}

Eigen::Map<const Vector> Network::bias(std::size_t layer) const {
  return {params_.data() + offsets_[layer] + fan_out(layer) * fan_in(layer),
          static_cast<Eigen::Index>(fan_out(layer))};
}

Eigen::Map<Matrix> Network::mutable_weights(std::size_t layer) {
  touch();
  return {params_.data() + offsets_[layer], static_cast<Eigen::Index>(fan_out(layer)),
          static_cast<Eigen::Index>(fan_in(layer))};
}

Eigen::Map<Vector> Network::mutable_bias(std::size_t layer) {
  touch();
  return {params_.data() + offsets_[layer] + fan_out(layer) * fan_in(layer),
          static_cast<Eigen::Index>(fan_out(layer))};
}

std::span<double> Network::mutable_parameters() {
  touch();
  return params_;
}

void Network::touch() { revision_ = next_revision(); }

Network init_network(const NetworkSpec& spec, Seed seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<double> params;
  const std::size_t layers = spec.hidden_widths.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = layer_width(spec, l);
    const std::size_t out = layer_width(spec, l + 1);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (std::size_t i = 0; i < in * out; ++i) params.push_back(rng.uniform(-limit, limit));
    params.insert(params.end(), out, 0.0);
  }
  return Network(spec, seed, std::move(params));
}

Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double top = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - top).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Matrix logits(const Network& net, const Matrix& batch) {
  check_batch(net, batch);
  Matrix a = batch;
  const std::size_t last = net.num_layers() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    Matrix z = a * net.weights(l).transpose();
    z.rowwise() += net.bias(l).transpose();
    a = z.cwiseMax(0.0);
  }
  Matrix z = a * net.weights(last).transpose();
  z.rowwise() += net.bias(last).transpose();
  return z;
}

Matrix forward(const Network& net, const Matrix& batch) { return softmax_rows(logits(net, batch)); }

ForwardTrace forward_trace(const Network& net, const Matrix& batch, bool train_mode, Rng* dropout_rng) {
  check_batch(net, batch);
  const double rate = net.spec().dropout_rate;
  const bool use_dropout = train_mode && rate > 0.0;
  if (use_dropout && dropout_rng == nullptr) throw InvalidArgument("dropout requires a random stream");

  ForwardTrace trace;
  trace.net = &net;
  trace.revision = net.revision();
  trace.train_mode = train_mode;
  trace.inputs.push_back(batch);
  const std::size_t last = net.num_layers() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    Matrix z = trace.inputs.back() * net.weights(l).transpose();
    z.rowwise() += net.bias(l).transpose();
    Matrix a = z.cwiseMax(0.0);
    if (use_dropout) {
      // Inverted dropout: kept units are scaled so evaluation needs no rescale.
      Matrix mask(a.rows(), a.cols());
      const double keep_scale = 1.0 / (1.0 - rate);
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = dropout_rng->uniform() < rate ? 0.0 : keep_scale;
      }
      a = a.cwiseProduct(mask);
      trace.dropout_mask.push_back(std::move(mask));
    }
    trace.pre_relu.push_back(std::move(z));
    trace.inputs.push_back(std::move(a));
  }
  trace.logits = trace.inputs.back() * net.weights(last).transpose();
  trace.logits.rowwise() += net.bias(last).transpose();
  trace.probs = softmax_rows(trace.logits);
  return trace;
}

double loss_ce(const Matrix& probs, const Matrix& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw InvalidArgument("loss_ce: probability and target shapes differ");
  }
  if (probs.rows() == 0) throw InvalidArgument("loss_ce: empty batch");
  const double total = -(targets.array() * (probs.array() + kLogFloor).log()).sum();
  return total / static_cast<double>(probs.rows());
}

double loss_mse(const Matrix& preds, const Matrix& targets) {
  if (preds.rows() != targets.rows() || preds.cols() != targets.cols()) {
    throw InvalidArgument("loss_mse: prediction and target shapes differ");
  }
  if (preds.rows() == 0) throw InvalidArgument("loss_mse: empty batch");
  return (preds - targets).squaredNorm() / static_cast<double>(preds.rows());
}

double l2_penalty(const Network& net) {
  const auto p = net.parameters();
  const Eigen::Map<const Vector> theta(p.data(), static_cast<Eigen::Index>(p.size()));
  return 0.5 * net.spec().l2_lambda * theta.squaredNorm();
}

std::vector<double> backward(const ForwardTrace& trace, const Matrix& targets) {
  if (trace.net == nullptr || trace.inputs.empty()) throw InvalidArgument("backward: missing forward trace");
  const Network& net = *trace.net;
  if (trace.revision != net.revision()) throw InvalidArgument("backward: stale forward trace");
  if (targets.rows() != trace.probs.rows() || targets.cols() != trace.probs.cols()) {
    throw InvalidArgument("backward: target shape does not match trace");
  }

  Vector grads = Vector::Zero(static_cast<Eigen::Index>(net.parameter_count()));
  const auto params = net.parameters();
  const double n = static_cast<double>(targets.rows());
  const std::size_t last = net.num_layers() - 1;

  // Softmax + cross-entropy: dL/dz = (p - t) / n for targets summing to one.
  Matrix delta = (trace.probs - targets) / n;
  std::size_t offset = net.parameter_count();
  for (std::size_t l = last + 1; l-- > 0;) {
    const std::size_t w_size = net.fan_out(l) * net.fan_in(l);
    offset -= w_size + net.fan_out(l);
    Eigen::Map<Matrix> d_w(grads.data() + offset, static_cast<Eigen::Index>(net.fan_out(l)),
                           static_cast<Eigen::Index>(net.fan_in(l)));
    Eigen::Map<Vector> d_b(grads.data() + offset + w_size, static_cast<Eigen::Index>(net.fan_out(l)));
    d_w.noalias() = delta.transpose() * trace.inputs[l];
    d_b = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix upstream = delta * net.weights(l);
    if (!trace.dropout_mask.empty()) upstream = upstream.cwiseProduct(trace.dropout_mask[l - 1]);
    delta = upstream.cwiseProduct((trace.pre_relu[l - 1].array() > 0.0).cast<double>().matrix());
  }

  const double lambda = net.spec().l2_lambda;
  if (lambda != 0.0) {
    for (std::size_t i = 0; i < params.size(); ++i) grads[static_cast<Eigen::Index>(i)] += lambda * params[i];
  }
  return {grads.data(), grads.data() + grads.size()};
}

Matrix input_jacobian(const Network& net, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != net.spec().input_dim) {
    throw InvalidArgument("input_jacobian: sample dimension mismatch");
  }
  const std::size_t last = net.num_layers() - 1;
  std::vector<Vector> pre;
  Vector a = x;
  for (std::size_t l = 0; l < last; ++l) {
    Vector z = net.weights(l) * a + net.bias(l);
    a = z.cwiseMax(0.0);
    pre.push_back(std::move(z));
  }
  Matrix jac = net.weights(last);
  for (std::size_t l = last; l-- > 0;) {
    const Eigen::RowVectorXd active = (pre[l].array() > 0.0).cast<double>().matrix().transpose();
    jac = jac.array().rowwise() * active.array();
    jac = jac * net.weights(l);
  }
  return jac;
}

Vector input_gradient(const Network& net, const Vector& x, std::size_t class_index) {
  if (class_index >= net.spec().num_classes) throw InvalidArgument("input_gradient: class index out of range");
  if (static_cast<std::size_t>(x.size()) != net.spec().input_dim) {
    throw InvalidArgument("input_gradient: sample dimension mismatch");
  }
  const std::size_t last = net.num_layers() - 1;
  std::vector<Vector> pre;
  Vector a = x;
  for (std::size_t l = 0; l < last; ++l) {
    Vector z = net.weights(l) * a + net.bias(l);
    a = z.cwiseMax(0.0);
    pre.push_back(std::move(z));
  }
  Vector g = net.weights(last).row(static_cast<Eigen::Index>(class_index)).transpose();
  for (std::size_t l = last; l-- > 0;) {
    g = g.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
    g = net.weights(l).transpose() * g;
  }
  return g;
}

int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = static_cast<int>(j);
  }
  return best;
}

std::vector<int> argmax_rows(const Matrix& rows) {
  std::vector<int> out(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax(rows.row(i));
  return out;
}

std::vector<int> predict_labels(const Network& net, const Matrix& batch) { return argmax_rows(logits(net, batch)); }

Matrix predict_top1(const Network& net, const Matrix& batch) {
  return one_hot(predict_labels(net, batch), net.spec().num_classes);
}

Matrix one_hot(std::span<const int> labels, std::size_t num_classes) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " out of range");
    }
    out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return out;
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  return {{"input_dim", spec.input_dim},       {"hidden_widths", spec.hidden_widths},
          {"num_classes", spec.num_classes},   {"dropout_rate", spec.dropout_rate},
          {"l2_lambda", spec.l2_lambda},       {"preset", std::string(to_string(spec.preset))}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  spec.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  spec.dropout_rate = j.value("dropout_rate", 0.0);
  spec.l2_lambda = j.value("l2_lambda", 0.0);
  spec.preset = parse_preset(j.value("preset", std::string("custom")));
  spec.validate();
  return spec;
}

nlohmann::json to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto w = net.weights(l);
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      rows.push_back(std::vector<double>(w.row(r).begin(), w.row(r).end()));
    }
    const auto b = net.bias(l);
    layers.push_back({{"w", std::move(rows)}, {"b", std::vector<double>(b.begin(), b.end())}});
  }
  return {{"spec", spec_to_json(net.spec())}, {"seed", net.seed()}, {"layers", std::move(layers)}};
}

Network network_from_json(const nlohmann::json& j) {
  NetworkSpec spec = spec_from_json(j.at("spec"));
  const auto& layers = j.at("layers");
  if (layers.size() != spec.hidden_widths.size() + 1) throw InvalidArgument("layer count does not match spec");
  std::vector<double> params;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t in = layer_width(spec, l);
    const std::size_t out = layer_width(spec, l + 1);
    const auto& rows = layers[l].at("w");
    if (rows.size() != out) throw InvalidArgument("weight row count does not match spec");
    for (const auto& row : rows) {
      if (row.size() != in) throw InvalidArgument("weight column count does not match spec");
      for (const auto& v : row) params.push_back(v.get<double>());
    }
    const auto& b = layers[l].at("b");
    if (b.size() != out) throw InvalidArgument("bias length does not match spec");
    for (const auto& v : b) params.push_back(v.get<double>());
  }
  return Network(std::move(spec), j.at("seed").get<Seed>(), std::move(params));
}

}  // namespace extractlab
