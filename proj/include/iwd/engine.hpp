#pragma once

// Outer distillation loop with influence weighting, train-from-scratch
// evaluation, the selection/pruning ablation and the temperature sweep.

#include "iwd/data.hpp"
#include "iwd/influence.hpp"
#include "iwd/matching.hpp"
#include "iwd/weighting.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace iwd {

struct DistillConfig {
  ObjectiveConfig objective;          // inner trajectory, statistic, discrepancy
  Index ipc = 10;
  SyntheticInit init = SyntheticInit::class_mean;
  double init_jitter = 0.1;
  double init_lr = 0.1;               // η̃ at the start
  std::size_t outer_steps = 200;
  double outer_lr = 0.1;              // step size on X̃
  double outer_momentum = 0.5;
  double lr_lr = 1e-3;                // step size on η̃ (unrolled trajectories only)
  Index batch_size = 32;              // real instances per class and step
  WeightPolicy policy;
  std::size_t influence_refresh = 50;
  HvpSolverConfig solver;
  ImplicitMode implicit = ImplicitMode::automatic;
  std::uint64_t seed = 0;

  void validate(const WeightedDataset& ds) const;
};

struct RefreshLog {
  std::size_t step = 0;
  Vector scores;
  Vector weights;
  double effective_size = 0.0;  // 1 / Σ w_i²
};

struct RunReport {
  std::vector<double> losses;  // one per outer step
  std::vector<double> lrs;     // η̃ after each step
  std::vector<RefreshLog> refreshes;
  SyntheticSet synthetic;
  double eval_mean = 0.0;
  double eval_std = 0.0;
  bool evaluated = false;
  double wall_seconds = 0.0;   // kept out of the numeric artifacts

  /// Mean of the refresh weights, or uniform weights when none were taken.
  Vector mean_weights(Index n) const;
};

/// The synthetic set a run with `cfg` starts from.
SyntheticSet initial_synthetic(const WeightedDataset& ds, const DistillConfig& cfg);

/// Test seam: receives the policy weights of each refresh and may replace
/// them. Used to force exact uniform weights through the weighted path.
using WeightOverride = std::function<Vector(const Vector&)>;

RunReport distill(const WeightedDataset& ds, const DistillConfig& cfg, std::size_t threads = 1,
                  const WeightOverride& override_weights = {});

struct EvalConfig {
  ArchDescriptor arch;
  InitDistribution init;
  std::size_t epochs = 300;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t n_repeats = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over repeats
  std::vector<double> accuracies;
};

/// Trains n_repeats fresh models on S (full batch, lr = S.lr) and reports
/// test accuracy.
EvalResult evaluate(const SyntheticSet& S, const WeightedDataset& test, const EvalConfig& cfg,
                    std::size_t threads = 1);

enum class AblationMode { random_select, influence_select, prune_then_distill, iwd };

std::string to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& name);

struct AblationRow {
  AblationMode mode;
  Index ipc = 0;
  double tau = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double accuracy_std = 0.0;
};

/// Influence scores of every instance against a synthetic set freshly
/// initialised from `cfg` (mode implied by the inner set).
Vector initial_scores(const WeightedDataset& ds, const DistillConfig& cfg, std::size_t threads = 1);

/// The set each mode trains the evaluation models on.
///   random_select       ipc real instances per class, uniformly at random
///   influence_select    the ipc lowest-score instances per class
///   prune_then_distill  drop the highest-score 10%, distill uniformly
///   iwd                 distill with cfg.policy
SyntheticSet ablation_set(const WeightedDataset& ds, const DistillConfig& cfg, AblationMode mode,
                          std::size_t threads = 1);

/// Every mode for every seed (seed k runs with derive_seed(cfg.seed, ·, k)
/// for all modes alike). Rows are ordered seed-major, then by `modes`.
std::vector<AblationRow> run_ablation(const WeightedDataset& ds, const WeightedDataset& test,
                                      const DistillConfig& cfg, const EvalConfig& eval,
                                      std::span<const AblationMode> modes, std::size_t seeds,
                                      std::size_t threads = 1);

struct TauPoint {
  double tau = 0.0;
  double accuracy = 0.0;
  double accuracy_std = 0.0;
  std::vector<double> per_seed;
};

/// Softmax-policy distillation plus evaluation at every τ in `grid`, seeds
/// shared across grid points; accuracy is the mean over seeds.
std::vector<TauPoint> tau_sweep(const WeightedDataset& ds, const WeightedDataset& test,
                                const DistillConfig& cfg, const EvalConfig& eval,
                                std::span<const double> grid, std::size_t seeds,
                                std::size_t threads = 1);

/// Seed for repetition k of an experiment with base seed `seed`.
std::uint64_t repetition_seed(std::uint64_t seed, std::size_t k);

}  // namespace iwd
