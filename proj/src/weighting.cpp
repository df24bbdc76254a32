#include "iwd/weighting.hpp"

#include <limits>

namespace iwd {

std::vector<Index> herding_select(const WeightedDataset& ds, const Matrix& features, Index k) {
  if (features.rows() != ds.size()) throw ContractError("herding: one feature row per instance");
  if (k < 1) throw ContractError("herding: k must be >= 1");
  std::vector<Index> out;
  for (int c = 0; c < ds.class_count; ++c) {
    const std::vector<Index> members = ds.class_indices(c);
    if (static_cast<Index>(members.size()) < k) {
      throw ContractError("herding: class " + std::to_string(c) + " has " +
                          std::to_string(members.size()) + " instances, fewer than k=" +
                          std::to_string(k));
    }
    Eigen::RowVectorXd target = Eigen::RowVectorXd::Zero(features.cols());
    for (Index i : members) target += features.row(i);
    target /= static_cast<double>(members.size());

    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(features.cols());
    std::vector<bool> taken(members.size(), false);
    for (Index step = 0; step < k; ++step) {
      std::size_t best = 0;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < members.size(); ++m) {
        if (taken[m]) continue;
        const double d =
            ((sum + features.row(members[m])) / static_cast<double>(step + 1) - target).squaredNorm();
        if (d < best_dist) {
          best_dist = d;
          best = m;
        }
      }
      taken[best] = true;
      sum += features.row(members[best]);
      out.push_back(members[best]);
    }
  }
  return out;
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::softmax: return "softmax";
    case PolicyKind::uniform: return "uniform";
    case PolicyKind::top_k: return "top-k";
    case PolicyKind::prune: return "prune";
  }
  return "?";
}

PolicyKind policy_kind_from_string(const std::string& name) {
  if (name == "softmax") return PolicyKind::softmax;
  if (name == "uniform") return PolicyKind::uniform;
  if (name == "top-k") return PolicyKind::top_k;
  if (name == "prune") return PolicyKind::prune;
  throw ContractError("unknown weight policy '" + name + "'");
}

void WeightPolicy::validate(Index n) const {
  switch (kind) {
    case PolicyKind::softmax:
      if (!(tau > 0.0) || !std::isfinite(tau)) throw ContractError("policy: tau must be positive");
      break;
    case PolicyKind::uniform: break;
    case PolicyKind::top_k:
      if (k < 1 || k > n) throw ContractError("policy: k must be in [1, N]");
      break;
    case PolicyKind::prune:
      if (!(keep_frac > 0.0 && keep_frac <= 1.0)) {
        throw ContractError("policy: keep_frac must be in (0, 1]");
      }
      break;
  }
}

Vector influence_weights(const Vector& scores, const WeightPolicy& policy) {
  const Index n = scores.size();
  if (n == 0) throw ContractError("influence_weights: empty scores");
  policy.validate(n);
  auto on_set = [n](const std::vector<Index>& keep) {
    Vector w = Vector::Zero(n);
    for (Index i : keep) w[i] = 1.0 / static_cast<double>(keep.size());
    return w;
  };
  switch (policy.kind) {
    case PolicyKind::softmax: return softmax_weights(standardize(-scores), policy.tau);
    case PolicyKind::uniform: return uniform_weights(n);
    // Selection keeps the instances that lower the objective most.
    case PolicyKind::top_k: return on_set(select_top_k(-scores, policy.k));
    case PolicyKind::prune: return on_set(prune_fraction(-scores, policy.keep_frac));
  }
  throw ContractError("influence_weights: unknown policy");
}

Vector batch_weights(const Vector& global, std::span<const Index> batch) {
  if (batch.empty()) throw ContractError("batch_weights: empty batch");
  const double scale = static_cast<double>(global.size()) / static_cast<double>(batch.size());
  Vector w(static_cast<Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (batch[k] < 0 || batch[k] >= global.size()) {
      throw ContractError("batch_weights: index out of range");
    }
    w[static_cast<Index>(k)] = global[batch[k]] * scale;
  }
  return w;
}

}  // namespace iwd
