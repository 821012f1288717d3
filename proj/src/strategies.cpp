#include "extractlab/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>

namespace extractlab {

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Random: return "random";
    case StrategyKind::Uncertainty: return "uncertainty";
    case StrategyKind::KCenter: return "kcenter";
    case StrategyKind::Adversarial: return "adversarial";
    case StrategyKind::Ensemble: return "ensemble";
  }
  return "random";
}

StrategyKind parse_strategy(std::string_view name) {
  if (name == "random") return StrategyKind::Random;
  if (name == "uncertainty") return StrategyKind::Uncertainty;
  if (name == "kcenter" || name == "k-center") return StrategyKind::KCenter;
  if (name == "adversarial" || name == "dfal") return StrategyKind::Adversarial;
  if (name == "ensemble") return StrategyKind::Ensemble;
  throw InvalidArgument("unknown strategy '" + std::string(name) + "'");
}

void SelectionContext::validate() const {
  if (k == 0) throw InvalidArgument("selection size k must be positive");
  if (k > pool_indices.size()) {
    throw InvalidArgument("k = " + std::to_string(k) + " exceeds pool size " + std::to_string(pool_indices.size()));
  }
  if (pool_probs.rows() != 0 && static_cast<std::size_t>(pool_probs.rows()) != pool_indices.size()) {
    throw InvalidArgument("pool_probs rows do not match pool_indices");
  }
}

double entropy(const Eigen::Ref<const Eigen::RowVectorXd>& probs) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) h -= probs(j) * std::log(probs(j) + kLogFloor);
  return std::max(0.0, h);
}

std::vector<std::size_t> random_order(std::span<const std::size_t> indices, Seed seed, std::size_t k) {
  if (k > indices.size()) throw InvalidArgument("k exceeds pool size");
  const std::uint64_t salt = mix64(seed);
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(indices.size());
  for (std::size_t idx : indices) keyed.emplace_back(mix64(salt ^ mix64(idx)), idx);
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k), keyed.end());
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(keyed[i].second);
  return out;
}

std::vector<std::size_t> select_random(const SelectionContext& ctx) {
  ctx.validate();
  return random_order(ctx.pool_indices, ctx.rng_seed, ctx.k);
}

namespace {

// Positions 0..n-1 ordered by descending score, ties toward lower position.
std::vector<std::size_t> top_k_by_score(const std::vector<double>& score, std::size_t k, bool descending) {
  std::vector<std::size_t> pos(score.size());
  std::iota(pos.begin(), pos.end(), 0);
  std::partial_sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k), pos.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (score[a] != score[b]) return descending ? score[a] > score[b] : score[a] < score[b];
                      return a < b;
                    });
  pos.resize(k);
  return pos;
}

std::vector<std::size_t> to_pool_indices(const SelectionContext& ctx, const std::vector<std::size_t>& positions) {
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(ctx.pool_indices[p]);
  return out;
}

double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<std::size_t> select_uncertainty(const SelectionContext& ctx) {
  ctx.validate();
  std::vector<double> h(ctx.pool_indices.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = entropy(ctx.pool_probs.row(static_cast<Eigen::Index>(i)));
  return to_pool_indices(ctx, top_k_by_score(h, ctx.k, true));
}

std::vector<std::size_t> kcenter_select(const Matrix& candidates, const Matrix& centers, std::size_t k) {
  if (centers.rows() == 0) throw InvalidArgument("kcenter_select: no initial centers");
  if (k > static_cast<std::size_t>(candidates.rows())) throw InvalidArgument("kcenter_select: k exceeds candidates");
  if (candidates.rows() > 0 && candidates.cols() != centers.cols()) {
    throw InvalidArgument("kcenter_select: candidate and center dimensions differ");
  }
  const auto n = candidates.rows();
  std::vector<double> min_dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index m = 0; m < centers.rows(); ++m) best = std::min(best, sq_dist(candidates, i, centers, m));
    min_dist[static_cast<std::size_t>(i)] = best;
  }
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  std::vector<std::size_t> picks;
  picks.reserve(k);
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = 0;
    double best_dist = -1.0;
    for (std::size_t i = 0; i < min_dist.size(); ++i) {
      if (!taken[i] && min_dist[i] > best_dist) {
        best = i;
        best_dist = min_dist[i];
      }
    }
    taken[best] = true;
    picks.push_back(best);
    const auto b = static_cast<Eigen::Index>(best);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& d = min_dist[static_cast<std::size_t>(i)];
      d = std::min(d, sq_dist(candidates, i, candidates, b));
    }
  }
  return picks;
}

std::vector<std::size_t> select_kcenter(const SelectionContext& ctx) {
  ctx.validate();
  return to_pool_indices(ctx, kcenter_select(ctx.pool_probs, ctx.center_probs, ctx.k));
}

DeepFoolResult deepfool(const Network& net, const Vector& x, const DeepFoolParams& params) {
  if (params.max_iter == 0) throw InvalidArgument("deepfool: max_iter must be at least 1");
  if (!(params.overshoot >= 1.0)) throw InvalidArgument("deepfool: overshoot must be at least 1");
  if (static_cast<std::size_t>(x.size()) != net.spec().input_dim) {
    throw InvalidArgument("deepfool: sample dimension mismatch");
  }
  const auto classes = static_cast<Eigen::Index>(net.spec().num_classes);
  auto eval_logits = [&](const Vector& point) -> Eigen::RowVectorXd {
    return logits(net, Matrix(point.transpose())).row(0);
  };

  DeepFoolResult result;
  Eigen::RowVectorXd z = eval_logits(x);
  const int original = argmax(z);
  result.original_label = original;
  result.final_label = original;

  Vector total = Vector::Zero(x.size());
  Vector current = x;
  for (std::size_t it = 1; it <= params.max_iter; ++it) {
    result.iterations_used = it;
    const Matrix jac = input_jacobian(net, current);
    Eigen::Index target = -1;
    double best_ratio = std::numeric_limits<double>::infinity();
    Vector best_w;
    double best_f = 0.0;
    for (Eigen::Index q = 0; q < classes; ++q) {
      if (q == original) continue;
      Vector w = (jac.row(q) - jac.row(original)).transpose();
      const double norm = w.norm();
      if (norm < 1e-12) continue;
      const double f = z(q) - z(original);
      const double ratio = std::abs(f) / norm;
      if (target < 0 || ratio < best_ratio) {
        target = q;
        best_ratio = ratio;
        best_w = std::move(w);
        best_f = f;
      }
    }
    if (target < 0) {
      result.x_hat = current;
      result.alpha = std::numeric_limits<double>::infinity();
      result.flipped = false;
      return result;
    }
    total += (std::abs(best_f) / best_w.squaredNorm()) * best_w;
    current = x + params.overshoot * total;
    z = eval_logits(current);
    result.final_label = argmax(z);
    if (result.final_label != original) {
      result.flipped = true;
      break;
    }
  }
  result.x_hat = current;
  result.alpha = (result.x_hat - x).squaredNorm();
  return result;
}

std::vector<std::size_t> select_dfal(const SelectionContext& ctx, const Matrix& pool_samples,
                                     const DeepFoolParams& params) {
  ctx.validate();
  if (ctx.substitute == nullptr) throw InvalidArgument("select_dfal: substitute network required");
  if (static_cast<std::size_t>(pool_samples.rows()) != ctx.pool_indices.size()) {
    throw InvalidArgument("select_dfal: pool_samples rows do not match pool_indices");
  }
  std::vector<double> key(ctx.pool_indices.size());
  for (std::size_t i = 0; i < key.size(); ++i) {
    const DeepFoolResult r = deepfool(*ctx.substitute, pool_samples.row(static_cast<Eigen::Index>(i)).transpose(), params);
    key[i] = r.flipped ? r.alpha : std::numeric_limits<double>::infinity();
  }
  return to_pool_indices(ctx, top_k_by_score(key, ctx.k, false));
}

std::vector<std::size_t> select_ensemble(const SelectionContext& ctx, const Matrix& pool_samples, std::size_t rho,
                                         const DeepFoolParams& params) {
  ctx.validate();
  const std::size_t effective = std::min(rho, ctx.pool_indices.size());
  if (ctx.k > effective) {
    throw InvalidArgument("ensemble: k = " + std::to_string(ctx.k) + " exceeds effective rho " +
                          std::to_string(effective));
  }
  SelectionContext pre = ctx;
  pre.k = effective;
  const std::vector<std::size_t> shortlisted = select_dfal(pre, pool_samples, params);

  // Back to pool positions, in pool order so k-center ties favor lower positions.
  std::vector<std::size_t> positions;
  positions.reserve(shortlisted.size());
  {
    std::vector<std::size_t> wanted = shortlisted;
    std::sort(wanted.begin(), wanted.end());
    for (std::size_t p = 0; p < ctx.pool_indices.size(); ++p) {
      if (std::binary_search(wanted.begin(), wanted.end(), ctx.pool_indices[p])) positions.push_back(p);
    }
  }
  const Matrix candidates = [&] {
    Matrix m(static_cast<Eigen::Index>(positions.size()), ctx.pool_probs.cols());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      m.row(static_cast<Eigen::Index>(i)) = ctx.pool_probs.row(static_cast<Eigen::Index>(positions[i]));
    }
    return m;
  }();
  std::vector<std::size_t> out;
  for (std::size_t c : kcenter_select(candidates, ctx.center_probs, ctx.k)) {
    out.push_back(ctx.pool_indices[positions[c]]);
  }
  return out;
}

std::vector<std::size_t> select(StrategyKind kind, const SelectionContext& ctx, const Matrix& pool_samples,
                                std::size_t rho, const DeepFoolParams& params) {
  switch (kind) {
    case StrategyKind::Random: return select_random(ctx);
    case StrategyKind::Uncertainty: return select_uncertainty(ctx);
    case StrategyKind::KCenter: return select_kcenter(ctx);
    case StrategyKind::Adversarial: return select_dfal(ctx, pool_samples, params);
    case StrategyKind::Ensemble: return select_ensemble(ctx, pool_samples, rho, params);
  }
  throw InvalidArgument("unknown strategy");
}

}  // namespace extractlab
