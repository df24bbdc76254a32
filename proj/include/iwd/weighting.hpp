#pragma once

// Turning influence scores into instance weights or selections.

#include "iwd/data.hpp"
#include "iwd/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace iwd {

/// exp(s_i/τ) / Σ_k exp(s_k/τ), with the max subtracted first.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax_weights(
    const Eigen::MatrixBase<Derived>& scores, typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  if (!(tau > Scalar(0))) throw ContractError("softmax: tau must be positive");
  if (scores.size() == 0) throw ContractError("softmax: empty scores");
  if (!scores.allFinite()) throw ContractError("softmax: non-finite score");
  const Scalar top = scores.maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = ((scores.array() - top) / tau).exp().matrix();
  return e / e.sum();
}

/// Zero mean, unit (population) variance. A constant vector maps to zeros.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> standardize(
    const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) throw ContractError("standardize: empty input");
  const Scalar mu = x.mean();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> c = (x.array() - mu).matrix();
  const Scalar sd = std::sqrt(c.squaredNorm() / static_cast<Scalar>(x.size()));
  if (sd == Scalar(0)) return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(x.size());
  return c / sd;
}

/// Indices of the k largest scores, largest first; ties go to the smaller index.
template <typename Derived>
std::vector<Index> select_top_k(const Eigen::MatrixBase<Derived>& scores, Index k) {
  if (k < 1 || k > scores.size()) {
    throw ContractError("select_top_k: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(scores.size()) + "]");
  }
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return scores[a] > scores[b]; });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

/// The top ⌈keep_frac·N⌉ indices by score, same order and tie rule.
template <typename Derived>
std::vector<Index> prune_fraction(const Eigen::MatrixBase<Derived>& scores, double keep_frac) {
  if (!(keep_frac > 0.0 && keep_frac <= 1.0)) {
    throw ContractError("prune_fraction: keep_frac must be in (0, 1]");
  }
  const auto n = static_cast<double>(scores.size());
  // Guard against ⌈0.9·100⌉ = 91 from the rounding of 0.9·100.
  const auto keep = static_cast<Index>(std::ceil(keep_frac * n - 1e-9));
  return select_top_k(scores, std::max<Index>(keep, 1));
}

/// Greedy herding inside each class: repeatedly add the instance that brings
/// the running mean of the selected features closest to the class mean.
/// Returns k indices per class, classes in ascending order.
std::vector<Index> herding_select(const WeightedDataset& ds, const Matrix& features, Index k);

enum class PolicyKind { softmax, uniform, top_k, prune };

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);

struct WeightPolicy {
  PolicyKind kind = PolicyKind::softmax;
  double tau = 1.0;
  Index k = 1;
  double keep_frac = 0.9;

  void validate(Index n) const;
};

/// Global weights over D from influence scores (positive = raises the
/// objective). softmax: softmax(standardize(−scores)/τ); uniform: 1/N;
/// top_k and prune: uniform over the retained set, zero elsewhere.
Vector influence_weights(const Vector& scores, const WeightPolicy& policy);

/// Global weights restricted to `batch` and rescaled by N/|batch|.
Vector batch_weights(const Vector& global, std::span<const Index> batch);

}  // namespace iwd
