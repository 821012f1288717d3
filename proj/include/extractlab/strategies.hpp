#pragma once

#include <cstddef>
#include <limits>
#include <string_view>
#include <vector>

#include "extractlab/nn.hpp"

namespace extractlab {

enum class StrategyKind { Random, Uncertainty, KCenter, Adversarial, Ensemble };

std::string_view to_string(StrategyKind kind);
StrategyKind parse_strategy(std::string_view name);

// Inputs to one round of subset selection. Row i of pool_probs belongs to
// pool_indices[i]; center_probs holds the substitute's predictions on the
// already-labeled samples.
struct SelectionContext {
  const Network* substitute = nullptr;
  std::vector<std::size_t> pool_indices;
  Matrix pool_probs;
  Matrix center_probs;
  std::size_t k = 0;
  Seed rng_seed = 0;

  // Throws InvalidArgument for k == 0, k larger than the pool, or misaligned rows.
  void validate() const;
};

struct DeepFoolParams {
  std::size_t max_iter = 50;
  double overshoot = 1.02;
};

struct DeepFoolResult {
  Vector x_hat;
  // Squared L2 distance from the input to x_hat; +inf when the gradient vanished.
  double alpha = std::numeric_limits<double>::infinity();
  std::size_t iterations_used = 0;
  bool flipped = false;
  int original_label = 0;
  int final_label = 0;
};

// -sum_j p_j log(p_j + kLogFloor), clamped at zero.
double entropy(const Eigen::Ref<const Eigen::RowVectorXd>& probs);

// Ranks pool indices by a seeded hash and keeps the k smallest keys. The
// keys depend only on (seed, index), so repeated rounds with one seed walk a
// single random order of the whole pool.
std::vector<std::size_t> select_random(const SelectionContext& ctx);
std::vector<std::size_t> random_order(std::span<const std::size_t> indices, Seed seed, std::size_t k);

// k largest entropies, ties toward lower pool position.
std::vector<std::size_t> select_uncertainty(const SelectionContext& ctx);

// Greedy max-min selection under squared L2 distance. Returns positions into
// `candidates` in pick order; each pick joins the center set.
std::vector<std::size_t> kcenter_select(const Matrix& candidates, const Matrix& centers, std::size_t k);
std::vector<std::size_t> select_kcenter(const SelectionContext& ctx);

// Multiclass DeepFool against the substitute: at each iterate, steps toward
// the nearest linearized boundary between the original class and any other.
DeepFoolResult deepfool(const Network& net, const Vector& x, const DeepFoolParams& params = {});

// k candidates with the smallest DeepFool perturbation; candidates that did
// not flip rank last in pool order. Rows of pool_samples follow pool_indices.
std::vector<std::size_t> select_dfal(const SelectionContext& ctx, const Matrix& pool_samples,
                                     const DeepFoolParams& params = {});

// DFAL keeps min(rho, pool) candidates, k-center then picks k of them.
std::vector<std::size_t> select_ensemble(const SelectionContext& ctx, const Matrix& pool_samples, std::size_t rho,
                                         const DeepFoolParams& params = {});

std::vector<std::size_t> select(StrategyKind kind, const SelectionContext& ctx, const Matrix& pool_samples,
                                std::size_t rho, const DeepFoolParams& params = {});

}  // namespace extractlab
