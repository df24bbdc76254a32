#include "iwd/engine.hpp"

#include "iwd/errors.hpp"
#include "iwd/parallel.hpp"
#include "iwd/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace iwd {

namespace {

// Seed stream tags.
constexpr std::uint64_t kInitStream = 0x1a17;
constexpr std::uint64_t kBatchStream = 0xba7c;
constexpr std::uint64_t kThetaStream = 0x7e7a;
constexpr std::uint64_t kInfluenceStream = 0x1f1f;
constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::uint64_t kSelectStream = 0x5e1e;
constexpr std::uint64_t kRepetitionStream = 0x4e9e;

constexpr double kPruneKeep = 0.9;
constexpr double kMinLr = 1e-6;

std::vector<Index> sample_batch(const WeightedDataset& ds, Index per_class, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<Index> batch;
  for (int c = 0; c < ds.class_count; ++c) {
    std::vector<Index> members = ds.class_indices(c);
    if (static_cast<Index>(members.size()) > per_class) {
      std::shuffle(members.begin(), members.end(), rng);
      members.resize(static_cast<std::size_t>(per_class));
    }
    batch.insert(batch.end(), members.begin(), members.end());
  }
  std::sort(batch.begin(), batch.end());
  return batch;
}

ScoreConfig score_config(const DistillConfig& cfg) {
  ScoreConfig sc;
  sc.mode = score_mode_for(cfg.objective.trajectory);
  sc.distill.objective = cfg.objective;
  sc.distill.solver = cfg.solver;
  sc.distill.implicit = cfg.implicit;
  return sc;
}

Vector scores_of(const std::vector<InfluenceRecord>& records) {
  Vector s(static_cast<Index>(records.size()));
  for (const auto& r : records) s[r.index] = r.total;
  return s;
}

SyntheticSet set_from_rows(const WeightedDataset& ds, const std::vector<Index>& rows, Index ipc,
                           double lr) {
  SyntheticSet S;
  S.X.resize(static_cast<Index>(rows.size()), ds.dim());
  S.y.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    S.X.row(static_cast<Index>(k)) = ds.X.row(rows[k]);
    S.y.push_back(ds.y[static_cast<std::size_t>(rows[k])]);
  }
  S.ipc = ipc;
  S.class_count = ds.class_count;
  S.lr = lr;
  S.validate();
  return S;
}

void require_class_sizes(const WeightedDataset& ds, Index ipc) {
  for (int c = 0; c < ds.class_count; ++c) {
    if (static_cast<Index>(ds.class_indices(c).size()) < ipc) {
      throw ContractError("selection: class " + std::to_string(c) + " has fewer than ipc=" +
                          std::to_string(ipc) + " instances");
    }
  }
}

}  // namespace

void DistillConfig::validate(const WeightedDataset& ds) const {
  ds.validate();
  objective.trajectory.validate();
  if (ipc < 1) throw ContractError("distill: ipc must be >= 1");
  if (outer_steps < 1) throw ContractError("distill: outer_steps must be >= 1");
  if (!(outer_lr >= 0.0)) throw ContractError("distill: outer_lr must be >= 0");
  if (!(outer_momentum >= 0.0 && outer_momentum < 1.0)) {
    throw ContractError("distill: outer_momentum must be in [0, 1)");
  }
  if (!(lr_lr >= 0.0)) throw ContractError("distill: lr_lr must be >= 0");
  if (!(init_lr > 0.0)) throw ContractError("distill: init_lr must be positive");
  if (!(init_jitter >= 0.0)) throw ContractError("distill: init_jitter must be >= 0");
  if (batch_size < 1) throw ContractError("distill: batch_size must be >= 1");
  if (influence_refresh < 1) throw ContractError("distill: influence_refresh must be >= 1");
  policy.validate(ds.size());
  solver.validate();
}

SyntheticSet initial_synthetic(const WeightedDataset& ds, const DistillConfig& cfg) {
  return init_synthetic(ds, cfg.ipc, cfg.init, derive_seed(cfg.seed, kInitStream), cfg.init_lr,
                        cfg.init_jitter);
}

Vector RunReport::mean_weights(Index n) const {
  if (refreshes.empty()) return uniform_weights(n);
  Vector m = Vector::Zero(n);
  for (const auto& r : refreshes) m += r.weights;
  return m / static_cast<double>(refreshes.size());
}

RunReport distill(const WeightedDataset& ds, const DistillConfig& cfg, std::size_t threads,
                  const WeightOverride& override_weights) {
  cfg.validate(ds);
  const auto started = std::chrono::steady_clock::now();
  RunReport report;
  SyntheticSet S = initial_synthetic(ds, cfg);
  const Index n = ds.size();
  const bool weighted = cfg.policy.kind != PolicyKind::uniform;
  const ScoreConfig scoring = score_config(cfg);
  Vector weights = uniform_weights(n);
  Matrix velocity = Matrix::Zero(S.X.rows(), S.X.cols());

  for (std::size_t t = 0; t < cfg.outer_steps; ++t) {
    if (weighted && t % cfg.influence_refresh == 0) {
      RefreshLog log;
      log.step = t;
      log.scores = scores_of(score_all(ds, S, scoring, derive_seed(cfg.seed, kInfluenceStream, t), threads));
      weights = influence_weights(log.scores, cfg.policy);
      if (override_weights) weights = override_weights(weights);
      log.weights = weights;
      log.effective_size = 1.0 / weights.squaredNorm();
      report.refreshes.push_back(std::move(log));
    }

    const std::vector<Index> batch = sample_batch(ds, cfg.batch_size, derive_seed(cfg.seed, kBatchStream, t));
    const MatchPlan plan = make_plan(ds, S, cfg.objective.stat.per_class, weights, batch);
    const ObjectiveResult r = objective(S, ds, weights, plan, cfg.objective,
                                        derive_seed(cfg.seed, kThetaStream, t), true, threads);
    if (!std::isfinite(r.value) || !r.grad_X.allFinite()) {
      std::ostringstream msg;
      msg << "distill: non-finite matching loss at outer step " << t << " (loss " << r.value
          << ", synthetic lr " << S.lr << ", max |X| " << S.X.cwiseAbs().maxCoeff()
          << ", batch size " << batch.size() << ")";
      throw NumericalError(msg.str());
    }
    report.losses.push_back(r.value);

    velocity = cfg.outer_momentum * velocity + r.grad_X;
    S.X -= cfg.outer_lr * velocity;
    if (cfg.objective.trajectory.unrolled) S.lr = std::max(kMinLr, S.lr - cfg.lr_lr * r.grad_lr);
    report.lrs.push_back(S.lr);
  }
  report.synthetic = std::move(S);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// ---- evaluation -----------------------------------------------------------------

void EvalConfig::validate() const {
  arch.validate();
  if (epochs < 1) throw ContractError("eval: epochs must be >= 1");
  if (n_repeats < 1) throw ContractError("eval: n_repeats must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("eval: momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ContractError("eval: weight_decay must be >= 0");
}

EvalResult evaluate(const SyntheticSet& S, const WeightedDataset& test, const EvalConfig& cfg,
                    std::size_t threads) {
  cfg.validate();
  S.validate();
  if (S.X.cols() != cfg.arch.input_dim || test.dim() != cfg.arch.input_dim) {
    throw ContractError("evaluate: input dimension does not match the architecture");
  }
  const SgdConfig sgd{S.lr, cfg.momentum, cfg.weight_decay};
  const Vector w = uniform_weights(S.size());
  EvalResult out;
  out.accuracies.resize(cfg.n_repeats);
  parallel_for(cfg.n_repeats, threads, [&](std::size_t r) {
    const ModelState fresh = init_model(cfg.arch, cfg.init, derive_seed(cfg.seed, kEvalStream, r));
    const ModelState trained = train_full_batch(fresh, S.X, S.y, w, sgd, cfg.epochs);
    out.accuracies[r] = accuracy(trained, test.X, test.y);
  });
  double sum = 0.0;
  for (double a : out.accuracies) sum += a;
  out.mean = sum / static_cast<double>(cfg.n_repeats);
  double ss = 0.0;
  for (double a : out.accuracies) ss += (a - out.mean) * (a - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(cfg.n_repeats));
  return out;
}

// ---- ablation ----------------------------------------------------------------------

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::random_select: return "random-select";
    case AblationMode::influence_select: return "influence-select";
    case AblationMode::prune_then_distill: return "prune-then-distill";
    case AblationMode::iwd: return "iwd";
  }
  return "?";
}

AblationMode ablation_mode_from_string(const std::string& name) {
  if (name == "random-select") return AblationMode::random_select;
  if (name == "influence-select") return AblationMode::influence_select;
  if (name == "prune-then-distill") return AblationMode::prune_then_distill;
  if (name == "iwd") return AblationMode::iwd;
  throw ContractError("unknown ablation mode '" + name + "'");
}

std::uint64_t repetition_seed(std::uint64_t seed, std::size_t k) {
  return derive_seed(seed, kRepetitionStream, k);
}

Vector initial_scores(const WeightedDataset& ds, const DistillConfig& cfg, std::size_t threads) {
  cfg.validate(ds);
  return scores_of(score_all(ds, initial_synthetic(ds, cfg), score_config(cfg),
                             derive_seed(cfg.seed, kInfluenceStream, 0), threads));
}

SyntheticSet ablation_set(const WeightedDataset& ds, const DistillConfig& cfg, AblationMode mode,
                          std::size_t threads) {
  switch (mode) {
    case AblationMode::random_select: {
      cfg.validate(ds);
      require_class_sizes(ds, cfg.ipc);
      Rng rng = make_rng(derive_seed(cfg.seed, kSelectStream));
      std::vector<Index> rows;
      for (int c = 0; c < ds.class_count; ++c) {
        std::vector<Index> members = ds.class_indices(c);
        std::shuffle(members.begin(), members.end(), rng);
        rows.insert(rows.end(), members.begin(), members.begin() + cfg.ipc);
      }
      return set_from_rows(ds, rows, cfg.ipc, cfg.init_lr);
    }
    case AblationMode::influence_select: {
      require_class_sizes(ds, cfg.ipc);
      const Vector scores = initial_scores(ds, cfg, threads);
      std::vector<Index> rows;
      for (int c = 0; c < ds.class_count; ++c) {
        const std::vector<Index> members = ds.class_indices(c);
        Vector benefit(static_cast<Index>(members.size()));
        for (std::size_t k = 0; k < members.size(); ++k) benefit[static_cast<Index>(k)] = -scores[members[k]];
        for (Index k : select_top_k(benefit, cfg.ipc)) rows.push_back(members[static_cast<std::size_t>(k)]);
      }
      return set_from_rows(ds, rows, cfg.ipc, cfg.init_lr);
    }
    case AblationMode::prune_then_distill: {
      const Vector scores = initial_scores(ds, cfg, threads);
      std::vector<Index> kept = prune_fraction(Vector(-scores), kPruneKeep);
      std::sort(kept.begin(), kept.end());
      DistillConfig uniform = cfg;
      uniform.policy.kind = PolicyKind::uniform;
      return distill(ds.subset(kept), uniform, threads).synthetic;
    }
    case AblationMode::iwd:
      return distill(ds, cfg, threads).synthetic;
  }
  throw ContractError("ablation_set: unknown mode");
}

std::vector<AblationRow> run_ablation(const WeightedDataset& ds, const WeightedDataset& test,
                                      const DistillConfig& cfg, const EvalConfig& eval,
                                      std::span<const AblationMode> modes, std::size_t seeds,
                                      std::size_t threads) {
  if (modes.empty()) throw ContractError("ablation: no modes");
  if (seeds < 1) throw ContractError("ablation: seeds must be >= 1");
  std::vector<AblationRow> rows(seeds * modes.size());
  parallel_for(rows.size(), threads, [&](std::size_t job) {
    const std::size_t k = job / modes.size();
    const AblationMode mode = modes[job % modes.size()];
    DistillConfig c = cfg;
    c.seed = repetition_seed(cfg.seed, k);
    EvalConfig e = eval;
    e.seed = repetition_seed(eval.seed, k);
    const EvalResult res = evaluate(ablation_set(ds, c, mode), test, e);
    rows[job] = {mode, cfg.ipc, cfg.policy.tau, k, res.mean, res.std};
  });
  return rows;
}

std::vector<TauPoint> tau_sweep(const WeightedDataset& ds, const WeightedDataset& test,
                                const DistillConfig& cfg, const EvalConfig& eval,
                                std::span<const double> grid, std::size_t seeds,
                                std::size_t threads) {
  if (grid.empty()) throw ContractError("tau sweep: empty grid");
  if (seeds < 1) throw ContractError("tau sweep: seeds must be >= 1");
  std::vector<double> acc(grid.size() * seeds);
  parallel_for(acc.size(), threads, [&](std::size_t job) {
    const std::size_t g = job / seeds;
    const std::size_t k = job % seeds;
    DistillConfig c = cfg;
    c.policy.kind = PolicyKind::softmax;
    c.policy.tau = grid[g];
    c.seed = repetition_seed(cfg.seed, k);
    EvalConfig e = eval;
    e.seed = repetition_seed(eval.seed, k);
    acc[job] = evaluate(distill(ds, c).synthetic, test, e).mean;
  });
  std::vector<TauPoint> out;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    TauPoint p;
    p.tau = grid[g];
    p.per_seed.assign(acc.begin() + static_cast<std::ptrdiff_t>(g * seeds),
                      acc.begin() + static_cast<std::ptrdiff_t>((g + 1) * seeds));
    double sum = 0.0;
    for (double a : p.per_seed) sum += a;
    p.accuracy = sum / static_cast<double>(seeds);
    double ss = 0.0;
    for (double a : p.per_seed) ss += (a - p.accuracy) * (a - p.accuracy);
    p.accuracy_std = std::sqrt(ss / static_cast<double>(seeds));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace iwd
