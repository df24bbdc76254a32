#include "iwd/experiment.hpp"

#include "iwd/errors.hpp"
#include "iwd/random.hpp"
#include "iwd/stats.hpp"
#include "iwd/svg.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace iwd {

namespace fs = std::filesystem;
using io::Json;

namespace {

// Component seed streams under the experiment seed.
constexpr std::uint64_t kTrainDataStream = 0xd1;
constexpr std::uint64_t kTestDataStream = 0xd2;
constexpr std::uint64_t kFlipStream = 0xd3;
constexpr std::uint64_t kDistillStream = 0xd4;
constexpr std::uint64_t kEvalSeedStream = 0xd5;
constexpr std::uint64_t kTrainerStream = 0xd6;

/// Typed access to one JSON object; every key read is remembered so that
/// finish() can reject the rest.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
  }

  [[nodiscard]] bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  [[nodiscard]] std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return as<T>(j_.at(key), field(key));
  }

  template <typename T>
  T need(const std::string& key) {
    if (!has(key)) throw ConfigError(field(key), "required");
    return as<T>(j_.at(key), field(key));
  }

  double positive(const std::string& key, double fallback) {
    const double v = get(key, fallback);
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field(key), "must be positive");
    return v;
  }

  double non_negative(const std::string& key, double fallback) {
    const double v = get(key, fallback);
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(field(key), "must be >= 0");
    return v;
  }

  double unit_interval(const std::string& key, double fallback) {
    const double v = get(key, fallback);
    if (!(v >= 0.0 && v < 1.0)) throw ConfigError(field(key), "must be in [0, 1)");
    return v;
  }

  template <typename T>
  T at_least(const std::string& key, T fallback, T lo) {
    const T v = get(key, fallback);
    if (v < lo) throw ConfigError(field(key), "must be >= " + std::to_string(lo));
    return v;
  }

  Reader sub(const std::string& key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, field(key));
  }

  /// Converts a string field with one of the library's parsers.
  template <typename Fn>
  auto choice(const std::string& key, const std::string& fallback, Fn parse) {
    const std::string name = get(key, fallback);
    try {
      return parse(name);
    } catch (const ContractError& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(field(key), "unknown key");
    }
  }

  [[nodiscard]] const Json& json() const { return j_; }

 private:
  template <typename T>
  static T as(const Json& v, const std::string& field) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field, "expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field, "expected a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field, "expected a number");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned()) {
          throw ConfigError(field, "must be >= 0");
        }
      }
    }
    try {
      return v.get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(field, e.what());
    }
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

ArchDescriptor parse_arch(Reader r) {
  ArchDescriptor a;
  a.kind = r.choice("kind", "linear", arch_kind_from_string);
  a.input_dim = r.at_least<Index>("input_dim", 2, 1);
  a.classes = r.at_least<Index>("classes", 2, 2);
  if (r.has("hidden")) {
    const Json& h = r.json().at("hidden");
    if (!h.is_array()) throw ConfigError(r.field("hidden"), "expected an array of widths");
    for (const auto& w : h) {
      if (!w.is_number_integer() || w.get<Index>() < 1) {
        throw ConfigError(r.field("hidden"), "widths must be positive integers");
      }
      a.hidden.push_back(w.get<Index>());
    }
  }
  a.image_side = r.get<Index>("image_side", 0);
  a.conv_channels = r.at_least<Index>("conv_channels", 8, 1);
  r.finish();
  try {
    a.validate();
  } catch (const ContractError& e) {
    throw ConfigError(r.field("kind"), e.what());
  }
  return a;
}

DatasetSpec parse_dataset(Reader r, const fs::path& base) {
  DatasetSpec d;
  d.kind = r.get<std::string>("kind", d.kind);
  if (d.kind == "gaussian-mixture") {
    d.classes = r.at_least("classes", d.classes, 2);
    d.per_class = r.at_least<Index>("per_class", d.per_class, 1);
    d.dim = r.at_least<Index>("dim", d.dim, 1);
    d.spread = r.non_negative("spread", d.spread);
  } else if (d.kind == "two-moons") {
    d.n = r.at_least<Index>("n", d.n, 2);
    d.noise = r.non_negative("noise", d.noise);
  } else if (d.kind == "csv") {
    d.path = resolve(base, r.need<std::string>("path"));
    d.classes = r.get("classes", 0);
  } else if (d.kind == "idx") {
    d.images = resolve(base, r.need<std::string>("images"));
    d.labels = resolve(base, r.need<std::string>("labels"));
    d.normalize = r.get("normalize", d.normalize);
  } else {
    throw ConfigError(r.field("kind"), "unknown dataset kind '" + d.kind + "'");
  }
  d.flip_fraction = r.unit_interval("flip_fraction", d.flip_fraction);
  if (r.has("seed")) d.seed = r.need<std::uint64_t>("seed");
  r.finish();
  for (const fs::path& p : {d.path, d.images, d.labels}) {
    if (!p.empty() && !fs::exists(p)) throw ConfigError(r.field("path"), "no such file " + p.string());
  }
  return d;
}

void parse_solver(Reader r, HvpSolverConfig& s) {
  s.method = r.choice("method", to_string(s.method), solver_method_from_string);
  s.damping = r.non_negative("damping", s.damping);
  s.tol = r.positive("tol", s.tol);
  s.max_iter = r.at_least<std::size_t>("max_iter", s.max_iter, 1);
  s.lissa.scale = r.positive("lissa_scale", s.lissa.scale);
  s.lissa.depth = r.at_least<std::size_t>("lissa_depth", s.lissa.depth, 1);
  s.lissa.repeats = r.at_least<std::size_t>("lissa_repeats", s.lissa.repeats, 1);
  r.finish();
}

void parse_init(Reader r, InitDistribution& init) {
  init.kind = r.choice("kind", "kaiming-uniform", [](const std::string& s) {
    if (s == "kaiming-uniform") return InitKind::kaiming_uniform;
    if (s == "normal") return InitKind::normal;
    throw ContractError("unknown init '" + s + "'");
  });
  init.sigma = r.non_negative("sigma", init.sigma);
  r.finish();
}

void parse_sgd(Reader r, SgdConfig& sgd) {
  sgd.lr = r.non_negative("lr", sgd.lr);
  sgd.momentum = r.unit_interval("momentum", sgd.momentum);
  sgd.weight_decay = r.non_negative("weight_decay", sgd.weight_decay);
  r.finish();
}

void parse_distill(Reader r, DistillConfig& d) {
  TrajectoryConfig& t = d.objective.trajectory;
  if (r.has("arch")) t.arch = parse_arch(r.sub("arch"));
  t.s_inner = r.choice("inner", to_string(t.s_inner), inner_set_from_string);
  t.steps = r.get("inner_steps", t.steps);
  parse_sgd(r.sub("inner_sgd"), t.inner_sgd);
  parse_init(r.sub("model_init"), t.init);
  t.init_samples = r.at_least<std::size_t>("init_samples", t.init_samples, 1);
  t.unrolled = r.get("unrolled", t.unrolled);
  if (t.unrolled && t.s_inner != InnerSet::synthetic) {
    throw ConfigError(r.field("unrolled"), "requires inner = synthetic");
  }
  if (t.unrolled && t.steps > kMaxUnrolledSteps) {
    throw ConfigError(r.field("inner_steps"),
                      "at most " + std::to_string(kMaxUnrolledSteps) + " when unrolled");
  }

  StatisticSpec& st = d.objective.stat;
  st.kind = r.choice("statistic", to_string(st.kind), statistic_kind_from_string);
  st.layerwise = r.get("layerwise", st.layerwise);
  st.per_class = r.get("per_class", st.per_class);
  {
    Reader disc = r.sub("discrepancy");
    d.objective.disc.type =
        disc.choice("type", to_string(d.objective.disc.type), discrepancy_type_from_string);
    d.objective.disc.bandwidth = disc.get("bandwidth", d.objective.disc.bandwidth);
    disc.finish();
  }

  d.ipc = r.at_least<Index>("ipc", d.ipc, 1);
  d.init = r.choice("init", to_string(d.init), synthetic_init_from_string);
  d.init_jitter = r.non_negative("init_jitter", d.init_jitter);
  d.init_lr = r.positive("init_lr", d.init_lr);
  d.outer_steps = r.at_least<std::size_t>("outer_steps", d.outer_steps, 1);
  d.outer_lr = r.non_negative("outer_lr", d.outer_lr);
  d.outer_momentum = r.unit_interval("outer_momentum", d.outer_momentum);
  d.lr_lr = r.non_negative("lr_lr", d.lr_lr);
  d.batch_size = r.at_least<Index>("batch_size", d.batch_size, 1);
  d.influence_refresh = r.at_least<std::size_t>("influence_refresh", d.influence_refresh, 1);
  d.implicit = r.choice("implicit", to_string(d.implicit), implicit_mode_from_string);
  {
    Reader p = r.sub("policy");
    d.policy.kind = p.choice("kind", to_string(d.policy.kind), policy_kind_from_string);
    d.policy.tau = p.positive("tau", d.policy.tau);
    d.policy.k = p.at_least<Index>("k", d.policy.k, 1);
    d.policy.keep_frac = p.positive("keep_frac", d.policy.keep_frac);
    if (d.policy.keep_frac > 1.0) throw ConfigError(p.field("keep_frac"), "must be <= 1");
    p.finish();
  }
  r.finish();
  try {
    t.validate();
  } catch (const ContractError& e) {
    throw ConfigError(r.field("inner_steps"), e.what());
  }
}

void parse_eval(Reader r, EvalConfig& e, bool& arch_given) {
  arch_given = r.has("arch");
  if (arch_given) e.arch = parse_arch(r.sub("arch"));
  parse_init(r.sub("model_init"), e.init);
  e.epochs = r.at_least<std::size_t>("epochs", e.epochs, 1);
  e.momentum = r.unit_interval("momentum", e.momentum);
  e.weight_decay = r.non_negative("weight_decay", e.weight_decay);
  e.n_repeats = r.at_least<std::size_t>("n_repeats", e.n_repeats, 1);
  r.finish();
}

void parse_loo(Reader r, LooSpec& l, bool& arch_given) {
  arch_given = r.has("arch");
  if (arch_given) l.trainer.arch = parse_arch(r.sub("arch"));
  l.trainer.l2 = r.non_negative("l2", l.trainer.l2);
  l.trainer.kind = r.choice("trainer", to_string(l.trainer.kind), trainer_kind_from_string);
  l.trainer.max_iter = r.at_least<std::size_t>("max_iter", l.trainer.max_iter, 1);
  l.trainer.grad_tol = r.positive("grad_tol", l.trainer.grad_tol);
  l.trainer.gd_lr = r.positive("gd_lr", l.trainer.gd_lr);
  l.max_instances = r.get("max_instances", l.max_instances);
  r.finish();
}

void check_dims(const ExperimentConfig& c) {
  auto data_dim = [](const DatasetSpec& d) -> std::optional<Index> {
    if (d.kind == "gaussian-mixture") return d.dim;
    if (d.kind == "two-moons") return 2;
    return std::nullopt;
  };
  auto data_classes = [](const DatasetSpec& d) -> std::optional<Index> {
    if (d.kind == "gaussian-mixture") return d.classes;
    if (d.kind == "two-moons") return 2;
    return std::nullopt;
  };
  const ArchDescriptor& a = c.distill.objective.trajectory.arch;
  if (auto dim = data_dim(c.train); dim && *dim != a.input_dim) {
    throw ConfigError("distill.arch.input_dim", "does not match the dataset dimension " +
                                                    std::to_string(*dim));
  }
  if (auto k = data_classes(c.train); k && *k != a.classes) {
    throw ConfigError("distill.arch.classes",
                      "does not match the dataset's " + std::to_string(*k) + " classes");
  }
  if (c.eval.arch.input_dim != a.input_dim) {
    throw ConfigError("eval.arch.input_dim", "does not match the distillation arch");
  }
  if (c.loo.trainer.arch.input_dim != a.input_dim) {
    throw ConfigError("loo.arch.input_dim", "does not match the distillation arch");
  }
  if (c.test) {
    if (auto dim = data_dim(*c.test); dim && *dim != a.input_dim) {
      throw ConfigError("test.dim", "does not match the training data");
    }
  }
  if (auto k = data_classes(c.train); k && c.train.kind == "gaussian-mixture") {
    if (c.distill.ipc > c.train.per_class) {
      throw ConfigError("distill.ipc", "exceeds the instances per class");
    }
  }
}

WeightedDataset make_dataset(const DatasetSpec& d, std::uint64_t seed) {
  if (d.kind == "gaussian-mixture") return gen_gaussian_mixture(d.classes, d.per_class, d.dim, d.spread, seed);
  if (d.kind == "two-moons") return gen_two_moons(d.n, d.noise, seed);
  if (d.kind == "csv") return io::load_dataset_csv(d.path, d.classes);
  return load_idx_pair(d.images, d.labels, IdxOptions{d.normalize});
}

const WeightedDataset& require_test(const ExperimentData& data, Command c) {
  if (!data.test) throw ConfigError("test", "required by the " + to_string(c) + " command");
  return *data.test;
}

SyntheticSet synthetic_for(const ExperimentConfig& cfg, const ExperimentData& data) {
  return cfg.synthetic ? io::load_synthetic(*cfg.synthetic) : initial_synthetic(data.train, cfg.distill);
}

ScoreConfig score_config_for(const ExperimentConfig& cfg, const ExperimentData& data) {
  ScoreConfig sc;
  sc.mode = cfg.influence_mode.value_or(score_mode_for(cfg.distill.objective.trajectory));
  sc.distill.objective = cfg.distill.objective;
  sc.distill.solver = cfg.distill.solver;
  sc.distill.implicit = cfg.distill.implicit;
  if (sc.mode == ScoreMode::classical) {
    const WeightedDataset& test = require_test(data, Command::influence);
    sc.classical.trainer = cfg.loo.trainer;
    sc.classical.metric = MetricSpec::test_loss(test.X, test.y);
    sc.classical.solver = cfg.distill.solver;
  }
  return sc;
}

void write_timing(const fs::path& out, Command c, double seconds) {
  io::write_json(out / "timing.json", Json{{"command", to_string(c)}, {"wall_seconds", seconds}});
}

void cmd_distill(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& out,
                 std::size_t threads) {
  RunReport r = distill(data.train, cfg.distill, threads);
  if (data.test) {
    const EvalResult e = evaluate(r.synthetic, *data.test, cfg.eval, threads);
    r.eval_mean = e.mean;
    r.eval_std = e.std;
    r.evaluated = true;
  }
  io::save_synthetic(r.synthetic, out / "synthetic");
  io::write_json(out / "run_report.json", io::report_to_json(r));
  io::save_curve_csv(r, out / "curve.csv");
  std::vector<double> steps(r.losses.size());
  std::iota(steps.begin(), steps.end(), 0.0);
  const std::vector<svg::Series> s{{"objective", steps, r.losses}};
  io::write_text(out / "curve.svg", svg::render_lines(s, "matching objective", "outer step", "loss"));
}

void cmd_influence(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& out,
                   std::size_t threads) {
  const SyntheticSet S = synthetic_for(cfg, data);
  const std::vector<InfluenceRecord> recs =
      score_all(data.train, S, score_config_for(cfg, data), derive_seed(cfg.distill.seed, 0x1f1f),
                threads);
  io::save_influence_csv(recs, data.flipped, out / "influence.csv");
  std::vector<double> totals;
  for (const auto& r : recs) totals.push_back(r.total);
  io::write_text(out / "histogram.svg",
                 svg::render_histogram(svg::histogram(totals, cfg.histogram_bins),
                                       "influence scores", "score"));
}

void cmd_evaluate(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& out,
                  std::size_t threads) {
  const WeightedDataset& test = require_test(data, Command::evaluate);
  const SyntheticSet S =
      cfg.synthetic ? io::load_synthetic(*cfg.synthetic) : distill(data.train, cfg.distill, threads).synthetic;
  const EvalResult e = evaluate(S, test, cfg.eval, threads);
  std::string csv = "repeat,accuracy\n";
  for (std::size_t r = 0; r < e.accuracies.size(); ++r) {
    csv += std::to_string(r) + "," + io::number(e.accuracies[r]) + "\n";
  }
  io::write_text(out / "evaluation.csv", csv);
  io::write_json(out / "evaluation.json", Json{{"schema_version", kConfigSchemaVersion},
                                                {"mean", e.mean},
                                                {"std", e.std},
                                                {"n_repeats", e.accuracies.size()}});
}

void cmd_ablate(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& out,
                std::size_t threads) {
  const WeightedDataset& test = require_test(data, Command::ablate);
  io::save_ablation_csv(
      run_ablation(data.train, test, cfg.distill, cfg.eval, cfg.ablation_modes, cfg.seeds, threads),
      out / "ablation.csv");
}

void cmd_tau_sweep(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& out,
                   std::size_t threads) {
  const WeightedDataset& test = require_test(data, Command::tau_sweep);
  const std::vector<TauPoint> pts =
      tau_sweep(data.train, test, cfg.distill, cfg.eval, cfg.tau_grid, cfg.seeds, threads);
  io::save_tau_csv(pts, out / "tau_sweep.csv");
  svg::Series s{"accuracy", {}, {}};
  for (const auto& p : pts) {
    s.x.push_back(p.tau);
    s.y.push_back(p.accuracy);
  }
  const std::vector<svg::Series> series{s};
  io::write_text(out / "curve.svg", svg::render_lines(series, "temperature sweep", "tau", "accuracy", true));
}

void cmd_loo_oracle(const ExperimentConfig& cfg, const ExperimentData& data, const fs::path& out,
                    std::size_t threads) {
  const WeightedDataset& test = require_test(data, Command::loo_oracle);
  const MetricSpec metric = MetricSpec::test_loss(test.X, test.y);
  const ModelState theta = train_erm(cfg.loo.trainer, data.train, data.train.w);
  HvpSolverConfig solver = cfg.distill.solver;
  solver.damping = cfg.loo.trainer.l2;  // H of the regularised fit
  const std::vector<InfluenceRecord> recs = classical_influence_all(theta, data.train, metric, solver);

  const Index n = data.train.size();
  const Index m = cfg.loo.max_instances == 0 ? n : std::min<Index>(n, static_cast<Index>(cfg.loo.max_instances));
  std::vector<Index> idx(static_cast<std::size_t>(m));
  std::iota(idx.begin(), idx.end(), Index{0});
  const std::vector<double> loo = loo_effects(cfg.loo.trainer, data.train, idx, metric, threads);
  std::vector<double> predicted;
  for (Index i : idx) predicted.push_back(-recs[static_cast<std::size_t>(i)].total / static_cast<double>(n));
  io::save_scatter_csv(idx, predicted, loo, out / "loo_scatter.csv");
  io::write_json(out / "loo_oracle.json", Json{{"schema_version", kConfigSchemaVersion},
                                               {"instances", m},
                                               {"spearman", spearman(predicted, loo)},
                                               {"pearson", pearson(predicted, loo)}});
}

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  distill.seed = derive_seed(s, kDistillStream);
  eval.seed = derive_seed(s, kEvalSeedStream);
  loo.trainer.seed = derive_seed(s, kTrainerStream);
}

ExperimentConfig parse_config(const Json& doc, const fs::path& base) {
  Reader r(doc, "");
  const int version = r.need<int>("schema_version");
  if (version != kConfigSchemaVersion) {
    throw ConfigError("schema_version", "unsupported version " + std::to_string(version));
  }
  ExperimentConfig c;
  const std::uint64_t seed = r.get<std::uint64_t>("seed", 0);
  if (r.has("output_dir")) c.output_dir = resolve(base, r.need<std::string>("output_dir"));
  if (!r.has("dataset")) throw ConfigError("dataset", "required");
  c.train = parse_dataset(r.sub("dataset"), base);
  if (r.has("test")) c.test = parse_dataset(r.sub("test"), base);
  parse_distill(r.sub("distill"), c.distill);
  parse_solver(r.sub("solver"), c.distill.solver);
  bool eval_arch = false, loo_arch = false;
  parse_eval(r.sub("eval"), c.eval, eval_arch);
  if (!eval_arch) c.eval.arch = c.distill.objective.trajectory.arch;
  parse_loo(r.sub("loo"), c.loo, loo_arch);
  if (!loo_arch) c.loo.trainer.arch = c.distill.objective.trajectory.arch;
  {
    Reader inf = r.sub("influence");
    if (inf.has("mode")) c.influence_mode = inf.choice("mode", "", score_mode_from_string);
    c.histogram_bins = inf.at_least<std::size_t>("histogram_bins", c.histogram_bins, 1);
    if (inf.has("synthetic")) c.synthetic = resolve(base, inf.need<std::string>("synthetic"));
    inf.finish();
  }
  {
    Reader ab = r.sub("ablation");
    if (ab.has("modes")) {
      const Json& m = ab.json().at("modes");
      if (!m.is_array() || m.empty()) throw ConfigError(ab.field("modes"), "expected a non-empty array");
      c.ablation_modes.clear();
      for (const auto& name : m) {
        if (!name.is_string()) throw ConfigError(ab.field("modes"), "expected mode names");
        try {
          c.ablation_modes.push_back(ablation_mode_from_string(name.get<std::string>()));
        } catch (const ContractError& e) {
          throw ConfigError(ab.field("modes"), e.what());
        }
      }
    }
    ab.finish();
  }
  c.seeds = r.at_least<std::size_t>("seeds", c.seeds, 1);
  if (r.has("tau_grid")) {
    const Json& g = doc.at("tau_grid");
    if (!g.is_array() || g.empty()) throw ConfigError("tau_grid", "expected a non-empty array");
    c.tau_grid.clear();
    for (const auto& v : g) {
      if (!v.is_number() || !(v.get<double>() > 0.0)) {
        throw ConfigError("tau_grid", "temperatures must be positive numbers");
      }
      c.tau_grid.push_back(v.get<double>());
    }
  }
  r.finish();
  c.set_seed(seed);
  check_dims(c);
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config", "no such file " + path.string());
  Json doc;
  try {
    doc = Json::parse(io::read_text(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config", "invalid JSON at byte " + std::to_string(e.byte));
  }
  return parse_config(doc, path.parent_path());
}

ExperimentData load_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  const std::uint64_t train_seed = cfg.train.seed.value_or(derive_seed(cfg.seed, kTrainDataStream));
  d.train = make_dataset(cfg.train, train_seed);
  if (cfg.train.flip_fraction > 0.0) {
    FlipResult f = flip_labels(d.train, {cfg.train.flip_fraction, derive_seed(train_seed, kFlipStream)});
    d.train = std::move(f.dataset);
    d.flipped = std::move(f.flipped);
  }
  if (cfg.test) {
    d.test = make_dataset(*cfg.test, cfg.test->seed.value_or(derive_seed(cfg.seed, kTestDataStream)));
  }
  if (d.train.dim() != cfg.distill.objective.trajectory.arch.input_dim) {
    throw ConfigError("distill.arch.input_dim", "does not match the dataset dimension " +
                                                    std::to_string(d.train.dim()));
  }
  try {
    cfg.distill.validate(d.train);
    cfg.eval.validate();
  } catch (const ContractError& e) {
    throw ConfigError("distill", e.what());
  }
  return d;
}

std::string to_string(Command c) {
  switch (c) {
    case Command::distill: return "distill";
    case Command::influence: return "influence";
    case Command::evaluate: return "evaluate";
    case Command::ablate: return "ablate";
    case Command::tau_sweep: return "tau-sweep";
    case Command::loo_oracle: return "loo-oracle";
  }
  return "?";
}

Command command_from_string(const std::string& name) {
  for (Command c : {Command::distill, Command::influence, Command::evaluate, Command::ablate,
                    Command::tau_sweep, Command::loo_oracle}) {
    if (to_string(c) == name) return c;
  }
  throw ContractError("unknown command '" + name + "'");
}

void run_command(Command c, const ExperimentConfig& cfg, const fs::path& out, std::size_t threads) {
  const auto started = std::chrono::steady_clock::now();
  const ExperimentData data = load_data(cfg);
  fs::create_directories(out);
  switch (c) {
    case Command::distill: cmd_distill(cfg, data, out, threads); break;
    case Command::influence: cmd_influence(cfg, data, out, threads); break;
    case Command::evaluate: cmd_evaluate(cfg, data, out, threads); break;
    case Command::ablate: cmd_ablate(cfg, data, out, threads); break;
    case Command::tau_sweep: cmd_tau_sweep(cfg, data, out, threads); break;
    case Command::loo_oracle: cmd_loo_oracle(cfg, data, out, threads); break;
  }
  write_timing(out, c, std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
}

}  // namespace iwd
