#pragma once

// Influence of individual real instances: the classical influence function
// on a trained model, exact leave-one-out retraining, and the influence of
// an instance's weight on the distillation objective, split into the part
// that flows through the real statistic (explicit) and the part that flows
// through the inner trajectory (implicit).
//
// Sign convention everywhere: a positive score means that upweighting the
// instance increases the metric / objective.

#include "iwd/data.hpp"
#include "iwd/matching.hpp"
#include "iwd/solvers.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace iwd {

// ---- metrics ---------------------------------------------------------------

enum class MetricKind { test_loss, distill_objective };

std::string to_string(MetricKind kind);
MetricKind metric_kind_from_string(const std::string& name);

/// A differentiable function of the model parameters.
///   test_loss          mean cross-entropy on (test_X, test_y)
///   distill_objective  Σ_groups D(Φ_syn(S_g; θ), Φ_real(D_g; θ)) at one θ
struct MetricSpec {
  MetricKind kind = MetricKind::test_loss;
  Matrix test_X;
  Labels test_y;
  SyntheticSet synthetic;
  MatchPlan plan;
  StatisticSpec stat;
  DiscrepancyKind disc;

  static MetricSpec test_loss(Matrix X, Labels y);
  static MetricSpec distill_objective(SyntheticSet S, MatchPlan plan, StatisticSpec stat,
                                      DiscrepancyKind disc);
};

double metric_value(const MetricSpec& metric, const ModelState& model);
Vector metric_grad(const MetricSpec& metric, const ModelState& model);

// ---- training to a (damped) empirical risk minimiser -------------------------

enum class TrainerKind { newton_cg, gd };

std::string to_string(TrainerKind kind);
TrainerKind trainer_kind_from_string(const std::string& name);

/// Minimises Σ_i w_i ℓ(θ; z_i) + (l2/2)‖θ‖² from init_model(arch, init, seed).
struct TrainerConfig {
  ArchDescriptor arch;
  InitDistribution init;
  std::uint64_t seed = 0;
  double l2 = 0.01;
  TrainerKind kind = TrainerKind::newton_cg;
  std::size_t max_iter = 50;     // Newton iterations or GD steps
  double grad_tol = 1e-11;       // Newton: stop when ‖∇‖ falls below this
  double gd_lr = 0.1;

  void validate() const;
};

ModelState train_erm(const TrainerConfig& cfg, const WeightedDataset& ds, const Vector& weights);

/// M(θ_{D∖z_j}) − M(θ_D). Removal sets w_j = 0 and leaves the other weights
/// unchanged; both fits start from the same initial state.
double loo_effect(const TrainerConfig& cfg, const WeightedDataset& ds, Index j,
                  const MetricSpec& metric);
/// Same for every index in `indices`, fitting θ_D once.
std::vector<double> loo_effects(const TrainerConfig& cfg, const WeightedDataset& ds,
                                std::span<const Index> indices, const MetricSpec& metric,
                                std::size_t threads = 1);

// ---- records ----------------------------------------------------------------

struct InfluenceRecord {
  Index index = 0;
  double total = 0.0;
  double explicit_term = 0.0;
  double implicit_term = 0.0;
  std::vector<double> per_step;  // per matched step, averaged over θ_0 draws
  double solver_residual = 0.0;  // worst relative residual of the solves used
  std::size_t solver_iterations = 0;
  bool a1_used = false;          // implicit term from the stationary-point approximation
};

// ---- classical influence ----------------------------------------------------

/// -<∇M(θ*), (H + λI)^{-1} ∇ℓ(θ*; z_j)> with H the Hessian of Σ_i w_i ℓ_i at
/// θ*. Removing z_j from a uniformly weighted set changes M by about
/// -score / N.
double classical_influence(const ModelState& theta_star, const WeightedDataset& ds, Index j,
                           const MetricSpec& metric, const HvpSolverConfig& cfg);

/// All N scores with a single solve. Records carry the score in both
/// `total` and `explicit_term`.
std::vector<InfluenceRecord> classical_influence_all(const ModelState& theta_star,
                                                     const WeightedDataset& ds,
                                                     const MetricSpec& metric,
                                                     const HvpSolverConfig& cfg);

// ---- distillation influence -------------------------------------------------

/// How u_{t,j} = dθ_t/dε is obtained when the inner trajectory runs on D.
///   exact  differentiate the inner SGD recursion (reverse mode)
///   a1     -(H_{θ_T} + λI)^{-1} ∇ℓ(θ_T; z_j) for every t
///   automatic  exact for |T| <= 1 or a zero inner lr, a1 otherwise
enum class ImplicitMode { automatic, exact, a1 };

std::string to_string(ImplicitMode mode);
ImplicitMode implicit_mode_from_string(const std::string& name);

struct DistillInfluenceConfig {
  ObjectiveConfig objective;
  HvpSolverConfig solver;
  ImplicitMode implicit = ImplicitMode::automatic;
};

/// Influence of every real instance's weight on the full-data objective
/// M(S; D) at base weights ds.w. Shared quantities (trajectories, a_t, b_t,
/// ∇D, the solves) are computed once; per-instance terms come from batched
/// passes. Output order is instance order for any worker count.
std::vector<InfluenceRecord> distill_influence_all(const SyntheticSet& S,
                                                   const WeightedDataset& ds,
                                                   const DistillInfluenceConfig& cfg,
                                                   std::uint64_t seed, std::size_t threads = 1);

/// Explicit term only; requires s_inner = S, where it is the whole influence.
InfluenceRecord distill_influence_explicit(const SyntheticSet& S, const WeightedDataset& ds,
                                           const DistillInfluenceConfig& cfg, std::uint64_t seed,
                                           Index j);

/// Explicit plus implicit term; requires s_inner = D.
InfluenceRecord distill_influence_full(const SyntheticSet& S, const WeightedDataset& ds,
                                       const DistillInfluenceConfig& cfg, std::uint64_t seed,
                                       Index j);

/// (M(w + εe_j) − M(w − εe_j)) / 2ε with the unnormalised bump applied to
/// the real statistic and, for s_inner = D, to the inner loss (the inner
/// trajectory is re-run).
double fd_objective_influence_oracle(const SyntheticSet& S, const WeightedDataset& ds,
                                     const ObjectiveConfig& cfg, std::uint64_t seed, Index j,
                                     double eps);

// ---- scoring every instance ---------------------------------------------------

enum class ScoreMode { explicit_only, full, classical };

std::string to_string(ScoreMode mode);
ScoreMode score_mode_from_string(const std::string& name);

struct ClassicalConfig {
  TrainerConfig trainer;
  MetricSpec metric;
  HvpSolverConfig solver;
};

struct ScoreConfig {
  ScoreMode mode = ScoreMode::explicit_only;
  DistillInfluenceConfig distill;
  ClassicalConfig classical;
};

/// The mode implied by the inner set: explicit for S, full for D.
ScoreMode score_mode_for(const TrajectoryConfig& cfg);

std::vector<InfluenceRecord> score_all(const WeightedDataset& ds, const SyntheticSet& S,
                                       const ScoreConfig& cfg, std::uint64_t seed,
                                       std::size_t threads = 1);

}  // namespace iwd
