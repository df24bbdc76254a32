#include "iwd/influence.hpp"

#include "iwd/errors.hpp"
#include "iwd/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace iwd {

// ---- metrics ---------------------------------------------------------------

std::string to_string(MetricKind kind) {
  return kind == MetricKind::test_loss ? "test-loss" : "distill-objective";
}

MetricKind metric_kind_from_string(const std::string& name) {
  if (name == "test-loss") return MetricKind::test_loss;
  if (name == "distill-objective") return MetricKind::distill_objective;
  throw ContractError("unknown metric '" + name + "'");
}

MetricSpec MetricSpec::test_loss(Matrix X, Labels y) {
  if (static_cast<Index>(y.size()) != X.rows() || X.rows() == 0) {
    throw ContractError("test-loss metric: need a non-empty test set with one label per row");
  }
  MetricSpec m;
  m.kind = MetricKind::test_loss;
  m.test_X = std::move(X);
  m.test_y = std::move(y);
  return m;
}

MetricSpec MetricSpec::distill_objective(SyntheticSet S, MatchPlan plan, StatisticSpec stat,
                                         DiscrepancyKind disc) {
  MetricSpec m;
  m.kind = MetricKind::distill_objective;
  m.synthetic = std::move(S);
  m.plan = std::move(plan);
  m.stat = stat;
  m.disc = disc;
  return m;
}

double metric_value(const MetricSpec& metric, const ModelState& model) {
  if (metric.kind == MetricKind::test_loss) {
    return weighted_loss(model, metric.test_X, metric.test_y, uniform_weights(metric.test_X.rows()));
  }
  return match_step(model, 0, metric.synthetic, metric.plan, metric.stat, metric.disc).value();
}

Vector metric_grad(const MetricSpec& metric, const ModelState& model) {
  if (metric.kind == MetricKind::test_loss) {
    return loss_function(model.arch, metric.test_X, metric.test_y,
                         uniform_weights(metric.test_X.rows()))
        .grad(model.theta);
  }
  const StepMatch m =
      match_step(model, 0, metric.synthetic, metric.plan, metric.stat, metric.disc);
  return step_theta_gradient(model, m, metric.synthetic, metric.plan, metric.stat);
}

// ---- trainer ----------------------------------------------------------------

std::string to_string(TrainerKind kind) { return kind == TrainerKind::newton_cg ? "newton-cg" : "gd"; }

TrainerKind trainer_kind_from_string(const std::string& name) {
  if (name == "newton-cg") return TrainerKind::newton_cg;
  if (name == "gd") return TrainerKind::gd;
  throw ContractError("unknown trainer '" + name + "'");
}

void TrainerConfig::validate() const {
  arch.validate();
  if (!(l2 >= 0.0)) throw ContractError("trainer: l2 must be >= 0");
  if (max_iter == 0) throw ContractError("trainer: max_iter must be positive");
  if (kind == TrainerKind::gd && !(gd_lr > 0.0)) throw ContractError("trainer: gd_lr must be > 0");
}

ModelState train_erm(const TrainerConfig& cfg, const WeightedDataset& ds, const Vector& weights) {
  cfg.validate();
  ModelState model = init_model(cfg.arch, cfg.init, cfg.seed);
  const ad::ScalarFunction f = loss_function(cfg.arch, ds.X, ds.y, weights);
  auto objective = [&](const Vector& th) { return f.eval(th) + 0.5 * cfg.l2 * th.squaredNorm(); };

  if (cfg.kind == TrainerKind::gd) {
    for (std::size_t it = 0; it < cfg.max_iter; ++it) {
      model.theta -= cfg.gd_lr * (f.grad(model.theta) + cfg.l2 * model.theta);
    }
    return model;
  }

  const HvpFn<double> hvp = [&](const Vector& v) { return f.hvp(model.theta, v); };
  const auto dim = static_cast<std::size_t>(model.theta.size());
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    const Vector g = f.grad(model.theta) + cfg.l2 * model.theta;
    const double gn = g.norm();
    if (gn <= cfg.grad_tol) break;
    const Vector step = conjugate_gradient<double>(hvp, g, cfg.l2, 1e-12, 10 * dim).x;
    // Backtracking on the damped objective; near the optimum the full
    // Newton step is taken since value differences drown in rounding.
    const double f0 = objective(model.theta);
    const double slope = g.dot(step);
    double t = 1.0;
    if (gn > 1e-6) {
      while (t > 1e-8 && objective(model.theta - t * step) > f0 - 1e-4 * t * slope) t *= 0.5;
    }
    model.theta -= t * step;
  }
  return model;
}

double loo_effect(const TrainerConfig& cfg, const WeightedDataset& ds, Index j,
                  const MetricSpec& metric) {
  const std::array<Index, 1> one{j};
  return loo_effects(cfg, ds, one, metric).front();
}

std::vector<double> loo_effects(const TrainerConfig& cfg, const WeightedDataset& ds,
                                std::span<const Index> indices, const MetricSpec& metric,
                                std::size_t threads) {
  if (ds.size() < 2) throw ContractError("loo: need at least two instances");
  for (Index j : indices) {
    if (j < 0 || j >= ds.size()) throw ContractError("loo: index out of range");
  }
  const double base = metric_value(metric, train_erm(cfg, ds, ds.w));
  std::vector<double> out(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t k) {
    Vector w = ds.w;
    w[indices[k]] = 0.0;
    out[k] = metric_value(metric, train_erm(cfg, ds, w)) - base;
  });
  return out;
}

// ---- classical influence ----------------------------------------------------

std::vector<InfluenceRecord> classical_influence_all(const ModelState& theta_star,
                                                     const WeightedDataset& ds,
                                                     const MetricSpec& metric,
                                                     const HvpSolverConfig& cfg) {
  cfg.validate(true);
  const ad::ScalarFunction f = loss_function(theta_star.arch, ds.X, ds.y, ds.w);
  const HvpFn<double> hvp = [&](const Vector& v) { return f.hvp(theta_star.theta, v); };
  const SolveResult<double> s_test = solve_inverse_hvp<double>(hvp, metric_grad(metric, theta_star), cfg);
  const Vector dots = per_instance_stat_dot({StatisticKind::gradient, false, false}, theta_star,
                                            ds.X, ds.y, s_test.x);
  std::vector<InfluenceRecord> records(static_cast<std::size_t>(ds.size()));
  for (Index j = 0; j < ds.size(); ++j) {
    InfluenceRecord& r = records[static_cast<std::size_t>(j)];
    r.index = j;
    r.total = -dots[j];
    r.explicit_term = r.total;
    r.per_step = {r.total};
    r.solver_residual = s_test.residual;
    r.solver_iterations = s_test.iterations;
  }
  return records;
}

double classical_influence(const ModelState& theta_star, const WeightedDataset& ds, Index j,
                           const MetricSpec& metric, const HvpSolverConfig& cfg) {
  if (j < 0 || j >= ds.size()) throw ContractError("classical influence: index out of range");
  return classical_influence_all(theta_star, ds, metric, cfg)[static_cast<std::size_t>(j)].total;
}

// ---- distillation influence -------------------------------------------------

std::string to_string(ImplicitMode mode) {
  switch (mode) {
    case ImplicitMode::automatic: return "auto";
    case ImplicitMode::exact: return "exact";
    case ImplicitMode::a1: return "a1";
  }
  return "?";
}

ImplicitMode implicit_mode_from_string(const std::string& name) {
  if (name == "auto") return ImplicitMode::automatic;
  if (name == "exact") return ImplicitMode::exact;
  if (name == "a1") return ImplicitMode::a1;
  throw ContractError("unknown implicit mode '" + name + "'");
}

namespace {

// Per-draw terms, one row per matched step and one column per instance.
struct DrawTerms {
  Matrix expl;
  Matrix impl;
  double residual = 0.0;
  std::size_t iterations = 0;
  bool a1 = false;
};

DrawTerms draw_terms(const SyntheticSet& S, const WeightedDataset& ds, const MatchPlan& plan,
                     const DistillInfluenceConfig& cfg, std::uint64_t draw_seed,
                     bool with_implicit) {
  const TrajectoryConfig& tc = cfg.objective.trajectory;
  const StatisticSpec& stat = cfg.objective.stat;
  const auto traj = run_inner_trajectory(tc, S, ds, ds.w, draw_seed);
  const auto steps = matched_steps(tc.steps);
  const auto rows = static_cast<Index>(steps.size());

  DrawTerms out;
  out.expl = Matrix::Zero(rows, ds.size());
  out.impl = Matrix::Zero(rows, ds.size());

  std::vector<StepMatch> matches;
  for (Index k = 0; k < rows; ++k) {
    const std::size_t t = steps[static_cast<std::size_t>(k)];
    StepMatch m = match_step(traj[t], t, S, plan, stat, cfg.objective.disc);
    // s^real_{t,j} = scale_g · φ(z_j; θ_t) under the frozen normaliser.
    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
      const MatchGroup& grp = plan.groups[g];
      const Vector r = per_instance_stat_dot(stat, traj[t], grp.real_X, grp.real_y,
                                             m.disc[g].grad_b);
      for (std::size_t pos = 0; pos < grp.real_index.size(); ++pos) {
        out.expl(k, grp.real_index[pos]) = grp.scale * r[static_cast<Index>(pos)];
      }
    }
    matches.push_back(std::move(m));
  }

  if (!with_implicit || tc.s_inner != InnerSet::real || tc.steps == 0) return out;

  const double lr = inner_learning_rate(tc, S);
  const double wd = tc.inner_sgd.weight_decay;
  const double mom = tc.inner_sgd.momentum;
  const bool use_a1 = cfg.implicit == ImplicitMode::a1 ||
                      (cfg.implicit == ImplicitMode::automatic && tc.steps > 1 && lr != 0.0);
  out.a1 = use_a1;
  const ad::ScalarFunction inner = loss_function(tc.arch, ds.X, ds.y, ds.w);
  const StatisticSpec grad_spec{StatisticKind::gradient, false, false};

  for (Index k = 0; k < rows; ++k) {
    const std::size_t t = steps[static_cast<std::size_t>(k)];
    const Vector g_t = step_theta_gradient(traj[t], matches[static_cast<std::size_t>(k)], S, plan, stat);
    if (use_a1) {
      const ModelState& end = traj.back();
      const HvpFn<double> hvp = [&](const Vector& v) -> Vector { return inner.hvp(end.theta, v) + wd * v; };
      const SolveResult<double> sol = solve_inverse_hvp<double>(hvp, g_t, cfg.solver);
      out.residual = std::max(out.residual, sol.residual);
      out.iterations += sol.iterations;
      out.impl.row(k) = -per_instance_stat_dot(grad_spec, end, ds.X, ds.y, sol.x).transpose();
      continue;
    }
    // Reverse pass through the inner SGD recursion
    //   δv_{s+1} = m δv_s + (H_s + wd) u_s + ∇ℓ_j(θ_s),  u_{s+1} = u_s − lr δv_{s+1},
    // for the terminal functional <g_t, u_t>. p_s is its adjoint with respect
    // to the forcing term ∇ℓ_j(θ_s).
    Vector lam_u = g_t;
    Vector lam_v = Vector::Zero(g_t.size());
    for (std::size_t s = t; s-- > 0;) {
      const Vector p = lam_v - lr * lam_u;
      out.impl.row(k) += per_instance_stat_dot(grad_spec, traj[s], ds.X, ds.y, p).transpose();
      if (s == 0) break;
      lam_u += inner.hvp(traj[s].theta, p) + wd * p;
      lam_v = mom * p;
    }
  }
  return out;
}

std::vector<InfluenceRecord> distill_records(const SyntheticSet& S, const WeightedDataset& ds,
                                             const DistillInfluenceConfig& cfg,
                                             std::uint64_t seed, std::size_t threads,
                                             bool with_implicit) {
  cfg.objective.trajectory.validate();
  cfg.solver.validate();
  ds.validate();
  S.validate();
  const MatchPlan plan = full_plan(ds, S, cfg.objective.stat.per_class);
  const std::size_t draws = cfg.objective.trajectory.init_samples;
  std::vector<DrawTerms> slots(draws);
  parallel_for(draws, threads, [&](std::size_t d) {
    slots[d] = draw_terms(S, ds, plan, cfg, init_draw_seed(seed, d), with_implicit);
  });

  const double inv = 1.0 / static_cast<double>(draws);
  Matrix expl = Matrix::Zero(slots.front().expl.rows(), ds.size());
  Matrix impl = expl;
  double residual = 0.0;
  std::size_t iterations = 0;
  for (const DrawTerms& d : slots) {
    expl += d.expl;
    impl += d.impl;
    residual = std::max(residual, d.residual);
    iterations += d.iterations;
  }
  expl *= inv;
  impl *= inv;

  std::vector<InfluenceRecord> records(static_cast<std::size_t>(ds.size()));
  for (Index j = 0; j < ds.size(); ++j) {
    InfluenceRecord& r = records[static_cast<std::size_t>(j)];
    r.index = j;
    r.explicit_term = expl.col(j).sum();
    r.implicit_term = impl.col(j).sum();
    r.total = r.explicit_term + r.implicit_term;
    r.per_step.resize(static_cast<std::size_t>(expl.rows()));
    for (Index k = 0; k < expl.rows(); ++k) {
      r.per_step[static_cast<std::size_t>(k)] = expl(k, j) + impl(k, j);
    }
    r.solver_residual = residual;
    r.solver_iterations = iterations;
    r.a1_used = slots.front().a1;
  }
  return records;
}

}  // namespace

std::vector<InfluenceRecord> distill_influence_all(const SyntheticSet& S,
                                                   const WeightedDataset& ds,
                                                   const DistillInfluenceConfig& cfg,
                                                   std::uint64_t seed, std::size_t threads) {
  return distill_records(S, ds, cfg, seed, threads, true);
}

InfluenceRecord distill_influence_explicit(const SyntheticSet& S, const WeightedDataset& ds,
                                           const DistillInfluenceConfig& cfg, std::uint64_t seed,
                                           Index j) {
  if (cfg.objective.trajectory.s_inner != InnerSet::synthetic) {
    throw ContractError("explicit influence: needs a trajectory trained on S");
  }
  if (j < 0 || j >= ds.size()) throw ContractError("explicit influence: index out of range");
  return distill_records(S, ds, cfg, seed, 1, false)[static_cast<std::size_t>(j)];
}

InfluenceRecord distill_influence_full(const SyntheticSet& S, const WeightedDataset& ds,
                                       const DistillInfluenceConfig& cfg, std::uint64_t seed,
                                       Index j) {
  if (cfg.objective.trajectory.s_inner != InnerSet::real) {
    throw ContractError("full influence: needs a trajectory trained on D");
  }
  if (j < 0 || j >= ds.size()) throw ContractError("full influence: index out of range");
  return distill_records(S, ds, cfg, seed, 1, true)[static_cast<std::size_t>(j)];
}

double fd_objective_influence_oracle(const SyntheticSet& S, const WeightedDataset& ds,
                                     const ObjectiveConfig& cfg, std::uint64_t seed, Index j,
                                     double eps) {
  if (!(eps > 0.0)) throw ContractError("fd oracle: eps must be positive");
  if (j < 0 || j >= ds.size()) throw ContractError("fd oracle: index out of range");
  const MatchPlan plan = full_plan(ds, S, cfg.stat.per_class);
  auto at = [&](double e) {
    Vector w = ds.w;
    if (cfg.trajectory.s_inner == InnerSet::real) w[j] += e;
    return objective(S, ds, w, plan.perturbed(j, e), cfg, seed, false).value;
  };
  return (at(eps) - at(-eps)) / (2.0 * eps);
}

// ---- score_all ----------------------------------------------------------------

std::string to_string(ScoreMode mode) {
  switch (mode) {
    case ScoreMode::explicit_only: return "explicit";
    case ScoreMode::full: return "full";
    case ScoreMode::classical: return "classical";
  }
  return "?";
}

ScoreMode score_mode_from_string(const std::string& name) {
  if (name == "explicit") return ScoreMode::explicit_only;
  if (name == "full") return ScoreMode::full;
  if (name == "classical") return ScoreMode::classical;
  throw ContractError("unknown influence mode '" + name + "'");
}

ScoreMode score_mode_for(const TrajectoryConfig& cfg) {
  return cfg.s_inner == InnerSet::synthetic ? ScoreMode::explicit_only : ScoreMode::full;
}

std::vector<InfluenceRecord> score_all(const WeightedDataset& ds, const SyntheticSet& S,
                                       const ScoreConfig& cfg, std::uint64_t seed,
                                       std::size_t threads) {
  switch (cfg.mode) {
    case ScoreMode::explicit_only:
      return distill_records(S, ds, cfg.distill, seed, threads, false);
    case ScoreMode::full:
      return distill_records(S, ds, cfg.distill, seed, threads, true);
    case ScoreMode::classical: {
      const ModelState theta_star = train_erm(cfg.classical.trainer, ds, ds.w);
      return classical_influence_all(theta_star, ds, cfg.classical.metric, cfg.classical.solver);
    }
  }
  throw ContractError("score_all: unknown mode");
}

}  // namespace iwd
