#pragma once

// Discrepancies between two block-structured statistics, with analytic
// gradients in both arguments.

#include "iwd/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace iwd {

/// A flat statistic split into consecutive blocks (one per parameter tensor
/// for layer-wise gradients, a single block otherwise).
template <typename Scalar>
struct BasicStatistic {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> values;
  std::vector<Eigen::Index> block_sizes;

  [[nodiscard]] Eigen::Index size() const { return values.size(); }
};

using Statistic = BasicStatistic<double>;

enum class DiscrepancyType { layer_cosine, squared_l2, mmd_rbf };

struct DiscrepancyKind {
  DiscrepancyType type = DiscrepancyType::layer_cosine;
  /// RBF bandwidth for mmd_rbf; <= 0 selects the median pairwise distance.
  double bandwidth = 0.0;
};

std::string to_string(DiscrepancyType type);
DiscrepancyType discrepancy_type_from_string(const std::string& name);

template <typename Scalar>
struct DiscrepancyResult {
  Scalar value = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad_a;  // ∇₁D
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad_b;  // ∇₂D
  /// Blocks skipped by layer_cosine because one side had zero norm.
  std::vector<Eigen::Index> degenerate_blocks;
  Scalar bandwidth = 0;  // mmd_rbf: the bandwidth actually used
};

namespace detail {

template <typename Scalar>
void check_structure(const BasicStatistic<Scalar>& a, const BasicStatistic<Scalar>& b) {
  if (a.block_sizes != b.block_sizes || a.values.size() != b.values.size()) {
    throw ContractError("discrepancy: statistics have different block structure");
  }
  const auto total = std::accumulate(a.block_sizes.begin(), a.block_sizes.end(), Eigen::Index{0});
  if (total != a.values.size()) throw ContractError("discrepancy: block sizes do not cover values");
}

template <typename Scalar>
Scalar median_pairwise_distance(const std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& pts) {
  std::vector<Scalar> d;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) d.push_back((pts[i] - pts[j]).norm());
  }
  if (d.empty()) return Scalar(1);
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size() / 2;
  const Scalar med = d.size() % 2 == 1 ? d[m] : (d[m - 1] + d[m]) / Scalar(2);
  return med > Scalar(0) ? med : Scalar(1);
}

}  // namespace detail

/// layer_cosine: Σ_l (1 - cos(a_l, b_l)).
/// squared_l2:   Σ_l ‖a_l - b_l‖².
/// mmd_rbf:      plug-in (V-statistic) MMD² between the blocks of `a` and
///               the blocks of `b`, each block read as one point; all blocks
///               must have equal size. The bandwidth is held constant when
///               differentiating.
template <typename Scalar>
DiscrepancyResult<Scalar> discrepancy(const DiscrepancyKind& kind, const BasicStatistic<Scalar>& a,
                                      const BasicStatistic<Scalar>& b) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  detail::check_structure(a, b);
  DiscrepancyResult<Scalar> r;
  r.grad_a = Vec::Zero(a.size());
  r.grad_b = Vec::Zero(b.size());

  switch (kind.type) {
    case DiscrepancyType::squared_l2: {
      const Vec diff = a.values - b.values;
      r.value = diff.squaredNorm();
      r.grad_a = Scalar(2) * diff;
      r.grad_b = Scalar(-2) * diff;
      return r;
    }
    case DiscrepancyType::layer_cosine: {
      Eigen::Index offset = 0;
      for (std::size_t l = 0; l < a.block_sizes.size(); ++l) {
        const Eigen::Index n = a.block_sizes[l];
        const auto al = a.values.segment(offset, n);
        const auto bl = b.values.segment(offset, n);
        const Scalar na = al.norm();
        const Scalar nb = bl.norm();
        if (na == Scalar(0) || nb == Scalar(0)) {
          r.degenerate_blocks.push_back(static_cast<Eigen::Index>(l));
          offset += n;
          continue;
        }
        const Scalar ab = al.dot(bl);
        const Scalar cos = ab / (na * nb);
        r.value += Scalar(1) - cos;
        r.grad_a.segment(offset, n) = -(bl / (na * nb) - (cos / (na * na)) * al);
        r.grad_b.segment(offset, n) = -(al / (na * nb) - (cos / (nb * nb)) * bl);
        offset += n;
      }
      return r;
    }
    case DiscrepancyType::mmd_rbf: {
      const Eigen::Index width = a.block_sizes.empty() ? 0 : a.block_sizes.front();
      for (Eigen::Index s : a.block_sizes) {
        if (s != width) throw ContractError("mmd_rbf: all blocks must have the same size");
      }
      std::vector<Vec> pa;
      std::vector<Vec> pb;
      for (std::size_t l = 0; l < a.block_sizes.size(); ++l) {
        pa.push_back(a.values.segment(static_cast<Eigen::Index>(l) * width, width));
        pb.push_back(b.values.segment(static_cast<Eigen::Index>(l) * width, width));
      }
      Scalar sigma = static_cast<Scalar>(kind.bandwidth);
      if (!(sigma > Scalar(0))) {
        std::vector<Vec> all = pa;
        all.insert(all.end(), pb.begin(), pb.end());
        sigma = detail::median_pairwise_distance(all);
      }
      r.bandwidth = sigma;
      const Scalar inv2s2 = Scalar(1) / (Scalar(2) * sigma * sigma);
      const Scalar inv_s2 = Scalar(1) / (sigma * sigma);
      const auto m = static_cast<Scalar>(pa.size());
      auto k = [&](const Vec& x, const Vec& y) { return std::exp(-(x - y).squaredNorm() * inv2s2); };
      // d/dx k(x, y) = -k(x, y) (x - y) / σ²
      for (std::size_t i = 0; i < pa.size(); ++i) {
        Vec ga = Vec::Zero(width);
        Vec gb = Vec::Zero(width);
        for (std::size_t j = 0; j < pa.size(); ++j) {
          const Scalar kaa = k(pa[i], pa[j]);
          const Scalar kbb = k(pb[i], pb[j]);
          const Scalar kab = k(pa[i], pb[j]);
          r.value += (kaa + kbb - Scalar(2) * kab) / (m * m);
          ga += Scalar(2) * (-kaa * inv_s2) * (pa[i] - pa[j]) / (m * m);
          ga -= Scalar(2) * (-kab * inv_s2) * (pa[i] - pb[j]) / (m * m);
          const Scalar kba = k(pb[i], pa[j]);
          gb += Scalar(2) * (-kbb * inv_s2) * (pb[i] - pb[j]) / (m * m);
          gb -= Scalar(2) * (-kba * inv_s2) * (pb[i] - pa[j]) / (m * m);
        }
        r.grad_a.segment(static_cast<Eigen::Index>(i) * width, width) = ga;
        r.grad_b.segment(static_cast<Eigen::Index>(i) * width, width) = gb;
      }
      if (r.value < Scalar(0)) r.value = Scalar(0);  // rounding below zero at a == b
      return r;
    }
  }
  throw ContractError("discrepancy: unknown kind");
}

inline std::string to_string(DiscrepancyType type) {
  switch (type) {
    case DiscrepancyType::layer_cosine: return "layer-cosine";
    case DiscrepancyType::squared_l2: return "squared-l2";
    case DiscrepancyType::mmd_rbf: return "mmd-rbf";
  }
  return "?";
}

inline DiscrepancyType discrepancy_type_from_string(const std::string& name) {
  if (name == "layer-cosine") return DiscrepancyType::layer_cosine;
  if (name == "squared-l2") return DiscrepancyType::squared_l2;
  if (name == "mmd-rbf") return DiscrepancyType::mmd_rbf;
  throw ContractError("unknown discrepancy '" + name + "'");
}

}  // namespace iwd
