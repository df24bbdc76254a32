#pragma once

// The matching objective: statistics of the synthetic and real sets compared
// by a discrepancy at every state of an inner training trajectory,
//
//   M(S; D) = E_θ0 Σ_t Σ_groups D(Φ_syn(S_g; θ_t), Φ_real(D_g; θ_t)).
//
// Groups are classes (per-class matching) or the whole set.

#include "iwd/data.hpp"
#include "iwd/discrepancy.hpp"
#include "iwd/models.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace iwd {

enum class StatisticKind { gradient, feature_mean, prediction_loss };

std::string to_string(StatisticKind kind);
StatisticKind statistic_kind_from_string(const std::string& name);

struct StatisticSpec {
  StatisticKind kind = StatisticKind::gradient;
  bool layerwise = true;  // gradient only: one block per parameter tensor
  bool per_class = true;  // match class by class and sum
};

std::vector<Index> statistic_block_sizes(const StatisticSpec& spec, const ArchDescriptor& arch);

/// Statistic of rows `inputs` weighted by the column `coeffs`, as a column
/// vector node:
///   gradient        Σ c_i ∇_θ ℓ(θ; z_i)
///   feature_mean    Σ c_i h(x_i)      (penultimate activations)
///   prediction_loss Σ c_i ℓ(θ; z_i)
/// The gradient kind needs `theta` to require a gradient; `create_graph`
/// keeps the result differentiable.
ad::Var statistic_var(const StatisticSpec& spec, const ArchDescriptor& arch, const ad::Var& theta,
                      const ad::Var& inputs, std::span<const int> labels, const ad::Var& coeffs,
                      bool create_graph);

Statistic weighted_statistic(const StatisticSpec& spec, const ModelState& model, const Matrix& X,
                             std::span<const int> labels, const Vector& coeffs);

/// Real statistic over `batch`, with the batch weights renormalised to sum
/// to one.
Statistic stat_real(const StatisticSpec& spec, const ModelState& model, const WeightedDataset& ds,
                    std::span<const Index> batch);

/// Synthetic statistic with uniform weights 1/M.
Statistic stat_syn(const StatisticSpec& spec, const ModelState& model, const SyntheticSet& S);

enum class InnerSet { synthetic, real };

std::string to_string(InnerSet s);
InnerSet inner_set_from_string(const std::string& name);

struct TrajectoryConfig {
  ArchDescriptor arch;
  InnerSet s_inner = InnerSet::synthetic;
  std::size_t steps = 1;
  SgdConfig inner_sgd{0.01, 0.0, 0.0};
  InitDistribution init;
  std::size_t init_samples = 1;
  /// s_inner = synthetic only: differentiate through the inner updates
  /// (steps <= 5). The inner learning rate is then the synthetic set's lr,
  /// which receives a gradient too.
  bool unrolled = false;

  void validate() const;
};

inline constexpr std::size_t kMaxUnrolledSteps = 5;

double inner_learning_rate(const TrajectoryConfig& cfg, const SyntheticSet& S);
std::uint64_t init_draw_seed(std::uint64_t seed, std::size_t draw);
/// Trajectory indices at which statistics are matched: 1..steps, or {0}
/// when steps == 0.
std::vector<std::size_t> matched_steps(std::size_t steps);

/// θ_0 ~ init(seed), then `steps` full-batch SGD steps on the inner set.
/// For s_inner = real the loss is Σ_i w_i ℓ_i with the given weights
/// (the dataset's own weights when omitted).
std::vector<ModelState> run_inner_trajectory(const TrajectoryConfig& cfg, const SyntheticSet& S,
                                             const WeightedDataset& ds, std::uint64_t seed);
std::vector<ModelState> run_inner_trajectory(const TrajectoryConfig& cfg, const SyntheticSet& S,
                                             const WeightedDataset& ds, const Vector& inner_weights,
                                             std::uint64_t seed);

/// Real-side coefficients of one matching group. A real row i contributes
/// c_i = w_i * scale, where scale = (N_g / |B_g|) / W_g is fixed when the
/// plan is built: perturbing w_j by ε moves c_j by ε * scale and nothing
/// else.
struct MatchGroup {
  int label = -1;  // -1: global group
  std::vector<Index> real_index;
  Matrix real_X;
  Labels real_y;
  Vector real_coeff;
  double scale = 1.0;
  std::vector<Index> syn_index;
  Labels syn_y;
};

struct MatchPlan {
  std::vector<MatchGroup> groups;
  /// For each real instance of the dataset: (group, position) or (-1, -1).
  std::vector<std::pair<int, Index>> locate;

  /// Coefficients with w_j bumped by `eps`.
  [[nodiscard]] MatchPlan perturbed(Index j, double eps) const;
};

/// Plan over `batch` using instance weights `weights`.
MatchPlan make_plan(const WeightedDataset& ds, const SyntheticSet& S, bool per_class,
                    const Vector& weights, std::span<const Index> batch);
/// Plan over the full dataset with its own weights.
MatchPlan full_plan(const WeightedDataset& ds, const SyntheticSet& S, bool per_class);

/// Statistics and discrepancy of every plan group at one trajectory state.
struct StepMatch {
  std::size_t step = 0;
  std::vector<Statistic> syn;   // a_t per group
  std::vector<Statistic> real;  // b_t per group
  std::vector<DiscrepancyResult<double>> disc;

  [[nodiscard]] double value() const;
  [[nodiscard]] std::size_t degenerate_blocks() const;
};

StepMatch match_step(const ModelState& state, std::size_t step, const SyntheticSet& S,
                     const MatchPlan& plan, const StatisticSpec& spec, const DiscrepancyKind& disc);

/// r_i = <φ(z_i; θ), v> for every row, where φ is the single-instance
/// statistic. One batched reverse pass with the coefficients as a node.
Vector per_instance_stat_dot(const StatisticSpec& spec, const ModelState& model, const Matrix& X,
                             std::span<const int> labels, const Vector& v);

/// J^T v = ∇_θ <Φ(θ), v> for the statistic with fixed coefficients.
Vector stat_vjp_theta(const StatisticSpec& spec, const ModelState& model, const Matrix& X,
                      std::span<const int> labels, const Vector& coeffs, const Vector& v);

/// Σ_groups J_syn^T ∇₁D + J_real^T ∇₂D at the state of `m`: the gradient of
/// the step's discrepancy with respect to θ.
Vector step_theta_gradient(const ModelState& state, const StepMatch& m, const SyntheticSet& S,
                           const MatchPlan& plan, const StatisticSpec& spec);

struct ObjectiveConfig {
  TrajectoryConfig trajectory;
  StatisticSpec stat;
  DiscrepancyKind disc;
};

struct ObjectiveResult {
  double value = 0.0;
  Matrix grad_X;              // dM/dX̃ (empty unless requested)
  double grad_lr = 0.0;       // dM/dη̃ (unrolled mode only)
  std::vector<double> per_step;  // per matched step, averaged over draws
  std::size_t degenerate_blocks = 0;
};

/// Objective over the full dataset (per-class groups as configured),
/// averaged over `init_samples` θ_0 draws.
ObjectiveResult objective(const SyntheticSet& S, const WeightedDataset& ds,
                          const ObjectiveConfig& cfg, std::uint64_t seed, bool with_grad = true,
                          std::size_t threads = 1);

/// Same with an explicit plan and inner-loss weights.
ObjectiveResult objective(const SyntheticSet& S, const WeightedDataset& ds,
                          const Vector& inner_weights, const MatchPlan& plan,
                          const ObjectiveConfig& cfg, std::uint64_t seed, bool with_grad = true,
                          std::size_t threads = 1);

}  // namespace iwd
