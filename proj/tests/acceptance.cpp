// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include "iwd/engine.hpp"
#include "iwd/experiment.hpp"
#include "iwd/random.hpp"
#include "iwd/solvers.hpp"
#include "iwd/stats.hpp"

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <sys/wait.h>

using namespace iwd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;  // 0: no runtime bound
  std::function<Outcome()> run;
};

double rel_err(const Vector& a, const Vector& b) { return (a - b).norm() / b.norm(); }
double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(4) << x;
  return s.str();
}

Vector random_vector(Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> nd;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

// ---- 1: derivatives ----------------------------------------------------------------

Outcome derivatives() {
  double worst = 0.0;
  auto check = [&](const ArchDescriptor& arch, const WeightedDataset& ds, const Vector& theta) {
    const ad::ScalarFunction f = loss_function(arch, ds.X, ds.y, ds.w);
    worst = std::max(worst, rel_err(f.grad(theta), ad::fd_grad_oracle(f, theta, 1e-5)));
    for (std::uint64_t k = 0; k < 3; ++k) {
      const Vector v = random_vector(f.dim(), 40 + k);
      const double h = 1e-4;
      const Vector fd = (f.grad(theta + h * v) - f.grad(theta - h * v)) / (2.0 * h);
      worst = std::max(worst, rel_err(f.hvp(theta, v), fd));
    }
  };
  const WeightedDataset lin = gen_gaussian_mixture(2, 30, 5, 1.0, 1);
  check(ArchDescriptor::linear(5, 2), lin, 0.3 * random_vector(12, 2));
  const WeightedDataset moons = gen_two_moons(40, 0.1, 3);
  const ArchDescriptor mlp = ArchDescriptor::mlp(2, {16}, 2);
  check(mlp, moons, init_model(mlp, {}, 4).theta);
  return {worst <= 1e-4, "worst relative error " + fmt(worst) + " (tol 1e-4)"};
}

// ---- 2: solver --------------------------------------------------------------------

Outcome solver() {
  const WeightedDataset ds = gen_gaussian_mixture(2, 100, 24, 1.5, 5);
  const WeightedDataset test = gen_gaussian_mixture(2, 50, 24, 1.5, 6);
  TrainerConfig tc;
  tc.arch = ArchDescriptor::linear(24, 2);  // 50 parameters
  tc.seed = 7;
  tc.l2 = 0.01;
  const ModelState theta = train_erm(tc, ds, ds.w);
  const auto loss = loss_function(tc.arch, ds.X, ds.y, ds.w);
  const HvpFn<double> hvp = [&](const Vector& v) -> Vector { return loss.hvp(theta.theta, v); };
  const Vector g = loss_function(tc.arch, test.X, test.y, test.w).grad(theta.theta);
  HvpSolverConfig cfg;
  cfg.damping = 0.01;
  const auto cg = solve_inverse_hvp<double>(hvp, g, cfg);
  cfg.method = SolverMethod::dense;
  const auto dense = solve_inverse_hvp<double>(hvp, g, cfg);
  const double err = rel_err(cg.x, dense.x);
  return {err <= 1e-6, "d = 50, relative error " + fmt(err) + " (tol 1e-6), " +
                           std::to_string(cg.iterations) + " CG iterations"};
}

// ---- 3: classical influence vs leave-one-out ------------------------------------------

Outcome influence_vs_loo() {
  const WeightedDataset ds = gen_gaussian_mixture(2, 100, 10, 1.5, 11);
  const WeightedDataset test = gen_gaussian_mixture(2, 50, 10, 1.5, 1011);
  TrainerConfig tc;
  tc.arch = ArchDescriptor::linear(10, 2);
  tc.seed = 11;
  tc.l2 = 0.01;
  const MetricSpec metric = MetricSpec::test_loss(test.X, test.y);
  const ModelState theta = train_erm(tc, ds, ds.w);
  HvpSolverConfig solver;
  solver.damping = tc.l2;
  const auto recs = classical_influence_all(theta, ds, metric, solver);
  std::vector<Index> all(static_cast<std::size_t>(ds.size()));
  std::iota(all.begin(), all.end(), Index{0});
  const std::vector<double> loo = loo_effects(tc, ds, all, metric);
  std::vector<double> predicted;
  for (const auto& r : recs) predicted.push_back(-r.total / static_cast<double>(ds.size()));
  const double rho = spearman(predicted, loo);
  return {rho >= 0.9, "N = 200, d = 10, Spearman " + fmt(rho) + " (min 0.9)"};
}

// ---- 4, 5: distillation influence vs finite differences ---------------------------------

ObjectiveConfig moons_objective(InnerSet inner, std::size_t steps) {
  ObjectiveConfig cfg;
  cfg.trajectory.arch = ArchDescriptor::mlp(2, {8}, 2);
  cfg.trajectory.s_inner = inner;
  cfg.trajectory.steps = steps;
  cfg.trajectory.inner_sgd = {0.1, 0.0, 0.0};
  cfg.trajectory.init_samples = 2;
  return cfg;
}

Outcome influence_vs_fd(InnerSet inner, std::size_t steps, double tol) {
  const WeightedDataset ds = gen_two_moons(40, 0.15, 21);
  const SyntheticSet S = init_synthetic(ds, 2, SyntheticInit::random_real, 22);
  DistillInfluenceConfig cfg;
  cfg.objective = moons_objective(inner, steps);
  const auto recs = distill_influence_all(S, ds, cfg, 9);
  Rng rng = make_rng(23);
  std::uniform_int_distribution<Index> pick(0, ds.size() - 1);
  double worst = 0.0;
  bool implicit_seen = false;
  for (int k = 0; k < 20; ++k) {
    const Index j = pick(rng);
    const auto& r = recs[static_cast<std::size_t>(j)];
    worst = std::max(worst, rel_err(r.total, fd_objective_influence_oracle(S, ds, cfg.objective, 9, j, 1e-4)));
    implicit_seen = implicit_seen || r.implicit_term != 0.0;
  }
  const bool terms_ok = inner == InnerSet::real ? implicit_seen : !implicit_seen;
  return {worst <= tol && terms_ok, "20 instances, worst relative error " + fmt(worst) +
                                        " (tol " + fmt(tol) + ")" +
                                        (inner == InnerSet::real ? ", implicit term active" : "")};
}

// ---- 6: high temperature ------------------------------------------------------------

Outcome high_temperature() {
  const WeightedDataset ds = gen_two_moons(60, 0.1, 2);
  DistillConfig cfg;
  cfg.objective = moons_objective(InnerSet::synthetic, 2);
  cfg.objective.trajectory.init_samples = 1;
  cfg.ipc = 2;
  cfg.init = SyntheticInit::random_real;
  cfg.outer_steps = 50;
  cfg.outer_lr = 0.05;
  cfg.batch_size = 16;
  cfg.influence_refresh = 10;
  cfg.seed = 3;
  cfg.policy.kind = PolicyKind::uniform;
  const RunReport uniform = distill(ds, cfg);
  cfg.policy.kind = PolicyKind::softmax;
  cfg.policy.tau = 1e6;
  const RunReport hot = distill(ds, cfg);
  double worst = 0.0;
  for (std::size_t t = 0; t < uniform.losses.size(); ++t) {
    worst = std::max(worst, rel_err(hot.losses[t], uniform.losses[t]));
  }
  return {worst <= 1e-5 && hot.refreshes.size() == 5,
          "50 steps, 5 refreshes, worst relative loss gap " + fmt(worst) + " (tol 1e-5)"};
}

// ---- 7, 8, 9: noisy two moons ------------------------------------------------------------
//
// 200 points at noise 0.15, 20% flipped labels, an MLP(16) for matching and
// evaluation. The synthetic set starts from jittered class means, and scores
// are taken once, at the start, against that set.

constexpr int kSeeds = 5;

struct NoisyFixture {
  FlipResult train;
  WeightedDataset test;
  DistillConfig distill;
  EvalConfig eval;
};

NoisyFixture noisy_fixture(int s) {
  const ArchDescriptor arch = ArchDescriptor::mlp(2, {16}, 2);
  NoisyFixture f{flip_labels(gen_two_moons(200, 0.15, 100 + s), {0.2, 200u + s}),
                 gen_two_moons(500, 0.15, 300 + s),
                 {},
                 {}};
  DistillConfig& c = f.distill;
  c.objective.trajectory.arch = arch;
  c.objective.trajectory.s_inner = InnerSet::synthetic;
  c.objective.trajectory.steps = 5;
  c.objective.trajectory.inner_sgd = {0.3, 0.0, 0.0};
  c.ipc = 10;
  c.init = SyntheticInit::class_mean;
  c.init_jitter = 0.1;
  c.init_lr = 0.1;
  c.outer_steps = 400;
  c.outer_lr = 0.1;
  c.batch_size = 32;
  c.policy.kind = PolicyKind::softmax;
  c.policy.tau = 3.0;
  c.influence_refresh = 1000;
  c.seed = 500u + s;
  f.eval.arch = arch;
  f.eval.epochs = 300;
  f.eval.seed = 600u + s;
  return f;
}

Outcome harmful_detection() {
  int passed = 0;
  std::string detail;
  for (int s = 0; s < kSeeds; ++s) {
    const NoisyFixture f = noisy_fixture(s);
    const WeightedDataset& ds = f.train.dataset;
    const Vector w = distill(ds, f.distill).mean_weights(ds.size());
    std::vector<bool> flipped(static_cast<std::size_t>(ds.size()), false);
    for (Index j : f.train.flipped) flipped[static_cast<std::size_t>(j)] = true;
    double wf = 0.0, wc = 0.0;
    for (Index j = 0; j < ds.size(); ++j) (flipped[static_cast<std::size_t>(j)] ? wf : wc) += w[j];
    wf /= static_cast<double>(f.train.flipped.size());
    wc /= static_cast<double>(ds.size() - static_cast<Index>(f.train.flipped.size()));
    passed += wf < wc ? 1 : 0;
    detail += (s ? ", " : "") + fmt(wf / wc);
  }
  return {passed == kSeeds, std::to_string(passed) + "/5 seeds with flipped < clean; flipped/clean mean weight " + detail};
}

Outcome ordering() {
  const std::vector<AblationMode> modes{AblationMode::random_select, AblationMode::influence_select,
                                        AblationMode::prune_then_distill, AblationMode::iwd};
  std::vector<double> mean(modes.size(), 0.0);
  int iwd_top = 0;
  for (int s = 0; s < kSeeds; ++s) {
    const NoisyFixture f = noisy_fixture(s);
    const auto rows = run_ablation(f.train.dataset, f.test, f.distill, f.eval, modes, 1);
    double best_other = 0.0;
    for (std::size_t m = 0; m < modes.size(); ++m) {
      mean[m] += rows[m].accuracy / kSeeds;
      if (modes[m] != AblationMode::iwd) best_other = std::max(best_other, rows[m].accuracy);
    }
    iwd_top += rows.back().accuracy >= best_other ? 1 : 0;
  }
  const bool ordered = mean[3] >= mean[2] && mean[2] >= mean[1] && mean[1] >= mean[0];
  std::string detail = "means";
  for (std::size_t m = 0; m < modes.size(); ++m) detail += " " + to_string(modes[m]) + " " + fmt(mean[m]);
  return {ordered && iwd_top >= 4, detail + "; IWD top in " + std::to_string(iwd_top) + "/5 seeds"};
}

Outcome temperature_sweep() {
  const std::vector<double> grid{0.01, 0.1, 1.0, 10.0, 100.0};
  const std::vector<double> uniform_limit{1e6};
  std::vector<double> acc(grid.size(), 0.0);
  double limit = 0.0;
  for (int s = 0; s < kSeeds; ++s) {
    const NoisyFixture f = noisy_fixture(s);
    const auto pts = tau_sweep(f.train.dataset, f.test, f.distill, f.eval, grid, 1);
    for (std::size_t g = 0; g < grid.size(); ++g) acc[g] += pts[g].accuracy / kSeeds;
    limit += tau_sweep(f.train.dataset, f.test, f.distill, f.eval, uniform_limit, 1)[0].accuracy / kSeeds;
  }
  const std::size_t best = static_cast<std::size_t>(std::max_element(acc.begin(), acc.end()) - acc.begin());
  bool unimodal = true;
  for (std::size_t g = 0; g + 1 <= best && g + 1 < acc.size(); ++g) unimodal = unimodal && acc[g] <= acc[g + 1];
  for (std::size_t g = best; g + 1 < acc.size(); ++g) unimodal = unimodal && acc[g] >= acc[g + 1];
  std::string detail = "accuracy";
  for (std::size_t g = 0; g < grid.size(); ++g) detail += " " + fmt(grid[g]) + ":" + fmt(acc[g]);
  detail += "; uniform limit " + fmt(limit) + "; best tau " + fmt(grid[best]);
  return {unimodal && acc[best] >= limit, detail};
}

// ---- 10: determinism ---------------------------------------------------------------------

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "iwd_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  io::write_text(dir / "config.json", R"({
  "schema_version": 1,
  "seed": 7,
  "dataset": {"kind": "two-moons", "n": 60, "noise": 0.1, "flip_fraction": 0.1},
  "test": {"kind": "two-moons", "n": 200, "noise": 0.1},
  "distill": {
    "arch": {"kind": "mlp", "input_dim": 2, "hidden": [8], "classes": 2},
    "inner": "real", "inner_steps": 2, "inner_sgd": {"lr": 0.1}, "implicit": "exact",
    "init_samples": 2, "ipc": 2, "init": "random-real",
    "outer_steps": 20, "outer_lr": 0.05, "batch_size": 16, "influence_refresh": 5
  },
  "eval": {"epochs": 100, "n_repeats": 3},
  "loo": {"arch": {"kind": "linear", "input_dim": 2, "classes": 2}, "max_instances": 30},
  "seeds": 2,
  "tau_grid": [0.1, 1, 10]
}
)");
  std::size_t compared = 0;
  for (const char* cmd : {"distill", "influence", "evaluate", "ablate", "tau-sweep", "loo-oracle"}) {
    for (const char* run : {"a", "b", "c"}) {
      const std::string threads = std::string(run) == "a" ? "1" : "3";
      const std::string line = std::string(IWD_CLI_PATH) + " " + cmd + " --config " +
                               (dir / "config.json").string() + " --out " + (dir / run).string() +
                               " --threads " + threads + " >/dev/null 2>&1";
      const int status = std::system(line.c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        return {false, std::string(cmd) + " exited with status " + std::to_string(status)};
      }
    }
  }
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    const std::string name = e.path().filename().string();
    if (name == "timing.json") continue;
    const std::string ref = io::read_text(e.path());
    for (const char* run : {"b", "c"}) {
      if (!fs::exists(dir / run / name) || io::read_text(dir / run / name) != ref) {
        return {false, name + " differs between runs"};
      }
    }
    ++compared;
  }
  return {compared == 13, std::to_string(compared) +
                              " artifacts from all six subcommands byte-identical across 3 runs (1 and 3 threads)"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "derivatives match finite differences", 10, derivatives},
      {2, "CG matches the dense solve", 5, solver},
      {3, "classical influence ranks like leave-one-out", 120, influence_vs_loo},
      {4, "explicit distillation influence matches finite differences", 60,
       [] { return influence_vs_fd(InnerSet::synthetic, 3, 1e-4); }},
      {5, "full influence (one step, inner set D) matches the re-run oracle", 120,
       [] { return influence_vs_fd(InnerSet::real, 1, 1e-2); }},
      {6, "tau = 1e6 reproduces the uniform losses", 0, high_temperature},
      {7, "flipped instances get lower weight", 0, harmful_detection},
      {8, "ablation ordering", 600, ordering},
      {9, "temperature sweep is unimodal", 0, temperature_sweep},
      {10, "reruns are byte-identical", 0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.budget_seconds == 0 || secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.name << " | "
              << o.detail << " | " << fmt(secs) << " s";
    if (c.budget_seconds > 0) std::cout << " (budget " << c.budget_seconds << " s)";
    std::cout << std::endl;
  }
  return failed;
}
