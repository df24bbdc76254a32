#include "iwd/matching.hpp"

#include "iwd/errors.hpp"
#include "iwd/parallel.hpp"
#include "iwd/random.hpp"

#include <array>

namespace iwd {

std::string to_string(StatisticKind kind) {
  switch (kind) {
    case StatisticKind::gradient: return "gradient";
    case StatisticKind::feature_mean: return "feature-mean";
    case StatisticKind::prediction_loss: return "prediction-loss";
  }
  return "?";
}

StatisticKind statistic_kind_from_string(const std::string& name) {
  if (name == "gradient") return StatisticKind::gradient;
  if (name == "feature-mean") return StatisticKind::feature_mean;
  if (name == "prediction-loss") return StatisticKind::prediction_loss;
  throw ContractError("unknown statistic '" + name + "'");
}

std::string to_string(InnerSet s) { return s == InnerSet::synthetic ? "S" : "D"; }

InnerSet inner_set_from_string(const std::string& name) {
  if (name == "S" || name == "synthetic") return InnerSet::synthetic;
  if (name == "D" || name == "real") return InnerSet::real;
  throw ContractError("unknown inner set '" + name + "'");
}

namespace {

Index feature_width(const ArchDescriptor& arch) {
  switch (arch.kind) {
    case ArchKind::linear: return arch.input_dim;
    case ArchKind::mlp: return arch.hidden.back();
    case ArchKind::tinyconv: return arch.conv_channels;
  }
  return 0;
}

}  // namespace

std::vector<Index> statistic_block_sizes(const StatisticSpec& spec, const ArchDescriptor& arch) {
  switch (spec.kind) {
    case StatisticKind::gradient: {
      if (!spec.layerwise) return {param_count(arch)};
      std::vector<Index> sizes;
      for (const ParamBlock& b : param_layout(arch)) sizes.push_back(b.size());
      return sizes;
    }
    case StatisticKind::feature_mean: return {feature_width(arch)};
    case StatisticKind::prediction_loss: return {1};
  }
  return {};
}

ad::Var statistic_var(const StatisticSpec& spec, const ArchDescriptor& arch, const ad::Var& theta,
                      const ad::Var& inputs, std::span<const int> labels, const ad::Var& coeffs,
                      bool create_graph) {
  const Forward fw = forward(arch, theta, inputs);
  switch (spec.kind) {
    case StatisticKind::gradient: {
      if (!theta.requires_grad()) {
        throw ContractError("gradient statistic: theta must be differentiable");
      }
      ad::Var loss = weighted_cross_entropy(fw.logits, labels, coeffs);
      const std::array<ad::Var, 1> wrt{theta};
      return theta.tape().grad(loss, wrt, create_graph).front();
    }
    case StatisticKind::feature_mean:
      if (coeffs.rows() != fw.features.rows()) throw ContractError("feature mean: size mismatch");
      return ad::matmul_tn(fw.features, coeffs);
    case StatisticKind::prediction_loss:
      return weighted_cross_entropy(fw.logits, labels, coeffs);
  }
  throw ContractError("unknown statistic kind");
}

Statistic weighted_statistic(const StatisticSpec& spec, const ModelState& model, const Matrix& X,
                             std::span<const int> labels, const Vector& coeffs) {
  check_weights(labels, coeffs, X.rows());
  ad::Tape tape;
  ad::Var stat = statistic_var(spec, model.arch, tape.variable(model.theta), tape.constant(X),
                               labels, tape.constant(coeffs), false);
  return Statistic{stat.value().reshaped(), statistic_block_sizes(spec, model.arch)};
}

Statistic stat_real(const StatisticSpec& spec, const ModelState& model, const WeightedDataset& ds,
                    std::span<const Index> batch) {
  if (batch.empty()) throw ContractError("stat_real: empty batch");
  Matrix X(static_cast<Index>(batch.size()), ds.dim());
  Labels y(batch.size());
  Vector w(static_cast<Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Index i = batch[k];
    if (i < 0 || i >= ds.size()) throw ContractError("stat_real: batch index out of range");
    X.row(static_cast<Index>(k)) = ds.X.row(i);
    y[k] = ds.y[static_cast<std::size_t>(i)];
    w[static_cast<Index>(k)] = ds.w[i];
  }
  const double total = w.sum();
  if (!(total > 0.0)) throw ContractError("stat_real: batch weights sum to zero");
  return weighted_statistic(spec, model, X, y, w / total);
}

Statistic stat_syn(const StatisticSpec& spec, const ModelState& model, const SyntheticSet& S) {
  if (S.size() == 0) throw ContractError("stat_syn: empty synthetic set");
  return weighted_statistic(spec, model, S.X, S.y,
                            Vector::Constant(S.size(), 1.0 / static_cast<double>(S.size())));
}

// ---- trajectory ------------------------------------------------------------

void TrajectoryConfig::validate() const {
  arch.validate();
  inner_sgd.validate();
  if (init_samples < 1) throw ContractError("trajectory: init_samples must be >= 1");
  if (init.kind == InitKind::normal && init.sigma < 0.0) {
    throw ContractError("trajectory: init sigma must be >= 0");
  }
  if (unrolled && s_inner != InnerSet::synthetic) {
    throw ContractError("trajectory: unrolled mode needs s_inner = S");
  }
  if (unrolled && steps > kMaxUnrolledSteps) {
    throw ContractError("trajectory: unrolled mode allows at most 5 steps");
  }
}

double inner_learning_rate(const TrajectoryConfig& cfg, const SyntheticSet& S) {
  return cfg.unrolled ? S.lr : cfg.inner_sgd.lr;
}

std::uint64_t init_draw_seed(std::uint64_t seed, std::size_t draw) {
  return derive_seed(seed, 0x7e7a0, draw);
}

std::vector<std::size_t> matched_steps(std::size_t steps) {
  if (steps == 0) return {0};
  std::vector<std::size_t> out(steps);
  for (std::size_t t = 0; t < steps; ++t) out[t] = t + 1;
  return out;
}

std::vector<ModelState> run_inner_trajectory(const TrajectoryConfig& cfg, const SyntheticSet& S,
                                             const WeightedDataset& ds, std::uint64_t seed) {
  return run_inner_trajectory(cfg, S, ds, ds.w, seed);
}

std::vector<ModelState> run_inner_trajectory(const TrajectoryConfig& cfg, const SyntheticSet& S,
                                             const WeightedDataset& ds, const Vector& inner_weights,
                                             std::uint64_t seed) {
  cfg.validate();
  std::vector<ModelState> states{init_model(cfg.arch, cfg.init, seed)};
  if (cfg.steps == 0) return states;

  SgdConfig sgd = cfg.inner_sgd;
  sgd.lr = inner_learning_rate(cfg, S);
  sgd.validate();
  const bool on_syn = cfg.s_inner == InnerSet::synthetic;
  const ad::ScalarFunction loss =
      on_syn ? loss_function(cfg.arch, S.X, S.y,
                             Vector::Constant(S.size(), 1.0 / static_cast<double>(S.size())))
             : loss_function(cfg.arch, ds.X, ds.y, inner_weights);

  Vector velocity = Vector::Zero(states.front().theta.size());
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    auto [next, v] = sgd_step(states.back(), loss.grad(states.back().theta), sgd, velocity);
    velocity = std::move(v);
    states.push_back(std::move(next));
  }
  return states;
}

// ---- plans ------------------------------------------------------------------

MatchPlan MatchPlan::perturbed(Index j, double eps) const {
  MatchPlan p = *this;
  if (j < 0 || j >= static_cast<Index>(locate.size())) {
    throw ContractError("perturbed: instance index out of range");
  }
  const auto [g, pos] = locate[static_cast<std::size_t>(j)];
  if (g >= 0) {
    MatchGroup& group = p.groups[static_cast<std::size_t>(g)];
    group.real_coeff[pos] += eps * group.scale;
  }
  return p;
}

MatchPlan make_plan(const WeightedDataset& ds, const SyntheticSet& S, bool per_class,
                    const Vector& weights, std::span<const Index> batch) {
  if (weights.size() != ds.size()) throw ContractError("plan: weight vector has wrong length");
  if ((weights.array() < 0.0).any()) throw ContractError("plan: negative weight");
  if (ds.dim() != S.X.cols()) throw ContractError("plan: real and synthetic widths differ");
  if (per_class && ds.class_count != S.class_count) {
    throw ContractError("plan: real and synthetic class counts differ");
  }

  std::vector<int> labels;
  if (per_class) {
    for (int c = 0; c < ds.class_count; ++c) labels.push_back(c);
  } else {
    labels.push_back(-1);
  }

  MatchPlan plan;
  plan.locate.assign(static_cast<std::size_t>(ds.size()), {-1, -1});
  for (int label : labels) {
    auto member = [&](Index i) { return label < 0 || ds.y[static_cast<std::size_t>(i)] == label; };
    MatchGroup g;
    g.label = label;
    for (Index i : batch) {
      if (i < 0 || i >= ds.size()) throw ContractError("plan: batch index out of range");
      if (member(i)) g.real_index.push_back(i);
    }
    for (Index k = 0; k < S.size(); ++k) {
      if (label < 0 || S.y[static_cast<std::size_t>(k)] == label) {
        g.syn_index.push_back(k);
        g.syn_y.push_back(S.y[static_cast<std::size_t>(k)]);
      }
    }
    if (g.real_index.empty() || g.syn_index.empty()) continue;

    Index n_group = 0;
    double w_group = 0.0;
    for (Index i = 0; i < ds.size(); ++i) {
      if (!member(i)) continue;
      ++n_group;
      w_group += weights[i];
    }
    if (!(w_group > 0.0)) throw ContractError("plan: a matched group has zero total weight");
    g.scale = (static_cast<double>(n_group) / static_cast<double>(g.real_index.size())) / w_group;

    const auto rows = static_cast<Index>(g.real_index.size());
    g.real_X.resize(rows, ds.dim());
    g.real_coeff.resize(rows);
    for (Index k = 0; k < rows; ++k) {
      const Index i = g.real_index[static_cast<std::size_t>(k)];
      g.real_X.row(k) = ds.X.row(i);
      g.real_y.push_back(ds.y[static_cast<std::size_t>(i)]);
      g.real_coeff[k] = weights[i] * g.scale;
      plan.locate[static_cast<std::size_t>(i)] = {static_cast<int>(plan.groups.size()), k};
    }
    plan.groups.push_back(std::move(g));
  }
  if (plan.groups.empty()) throw ContractError("plan: no group has both real and synthetic rows");
  return plan;
}

MatchPlan full_plan(const WeightedDataset& ds, const SyntheticSet& S, bool per_class) {
  std::vector<Index> all(static_cast<std::size_t>(ds.size()));
  for (Index i = 0; i < ds.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return make_plan(ds, S, per_class, ds.w, all);
}

// ---- per-step terms ---------------------------------------------------------

namespace {

Vector syn_coeffs(const MatchGroup& g) {
  const auto m = static_cast<Index>(g.syn_index.size());
  return Vector::Constant(m, 1.0 / static_cast<double>(m));
}

Matrix syn_rows(const SyntheticSet& S, const MatchGroup& g) {
  Matrix X(static_cast<Index>(g.syn_index.size()), S.X.cols());
  for (std::size_t k = 0; k < g.syn_index.size(); ++k) {
    X.row(static_cast<Index>(k)) = S.X.row(g.syn_index[k]);
  }
  return X;
}

}  // namespace

double StepMatch::value() const {
  double v = 0.0;
  for (const auto& d : disc) v += d.value;
  return v;
}

std::size_t StepMatch::degenerate_blocks() const {
  std::size_t n = 0;
  for (const auto& d : disc) n += d.degenerate_blocks.size();
  return n;
}

StepMatch match_step(const ModelState& state, std::size_t step, const SyntheticSet& S,
                     const MatchPlan& plan, const StatisticSpec& spec, const DiscrepancyKind& disc) {
  StepMatch m;
  m.step = step;
  for (const MatchGroup& g : plan.groups) {
    m.syn.push_back(weighted_statistic(spec, state, syn_rows(S, g), g.syn_y, syn_coeffs(g)));
    m.real.push_back(weighted_statistic(spec, state, g.real_X, g.real_y, g.real_coeff));
    m.disc.push_back(discrepancy(disc, m.syn.back(), m.real.back()));
  }
  return m;
}

Vector per_instance_stat_dot(const StatisticSpec& spec, const ModelState& model, const Matrix& X,
                             std::span<const int> labels, const Vector& v) {
  if (static_cast<Index>(labels.size()) != X.rows()) {
    throw ContractError("per_instance_stat_dot: size mismatch");
  }
  ad::Tape tape;
  ad::Var u = tape.variable(Vector::Zero(X.rows()));
  ad::Var stat = statistic_var(spec, model.arch, tape.variable(model.theta), tape.constant(X),
                               labels, u, true);
  if (stat.rows() != v.size()) throw ContractError("per_instance_stat_dot: direction size");
  const std::array<ad::Var, 1> wrt{u};
  return tape.grad(ad::dot(stat, tape.constant(v)), wrt).front().value();
}

Vector stat_vjp_theta(const StatisticSpec& spec, const ModelState& model, const Matrix& X,
                      std::span<const int> labels, const Vector& coeffs, const Vector& v) {
  check_weights(labels, coeffs, X.rows());
  ad::Tape tape;
  ad::Var theta = tape.variable(model.theta);
  ad::Var stat = statistic_var(spec, model.arch, theta, tape.constant(X), labels,
                               tape.constant(coeffs), true);
  if (stat.rows() != v.size()) throw ContractError("stat_vjp_theta: direction size");
  const std::array<ad::Var, 1> wrt{theta};
  return tape.grad(ad::dot(stat, tape.constant(v)), wrt).front().value();
}

Vector step_theta_gradient(const ModelState& state, const StepMatch& m, const SyntheticSet& S,
                           const MatchPlan& plan, const StatisticSpec& spec) {
  Vector g = Vector::Zero(state.theta.size());
  for (std::size_t k = 0; k < plan.groups.size(); ++k) {
    const MatchGroup& grp = plan.groups[k];
    g += stat_vjp_theta(spec, state, syn_rows(S, grp), grp.syn_y, syn_coeffs(grp),
                        m.disc[k].grad_a);
    g += stat_vjp_theta(spec, state, grp.real_X, grp.real_y, grp.real_coeff, m.disc[k].grad_b);
  }
  return g;
}

// ---- objective --------------------------------------------------------------

namespace {

struct DrawResult {
  double value = 0.0;
  Matrix grad_X;
  double grad_lr = 0.0;
  std::vector<double> per_step;
  std::size_t degenerate = 0;
};

// Trajectory held fixed; gradients reach X̃ through Φ_syn only.
DrawResult frozen_draw(const SyntheticSet& S, const WeightedDataset& ds,
                       const Vector& inner_weights, const MatchPlan& plan,
                       const ObjectiveConfig& cfg, std::uint64_t seed, bool with_grad) {
  DrawResult r;
  const auto traj = run_inner_trajectory(cfg.trajectory, S, ds, inner_weights, seed);
  if (with_grad) r.grad_X = Matrix::Zero(S.X.rows(), S.X.cols());
  for (std::size_t t : matched_steps(cfg.trajectory.steps)) {
    const StepMatch m = match_step(traj[t], t, S, plan, cfg.stat, cfg.disc);
    r.per_step.push_back(m.value());
    r.value += m.value();
    r.degenerate += m.degenerate_blocks();
    if (!with_grad) continue;

    ad::Tape tape;
    ad::Var theta = tape.variable(traj[t].theta);
    ad::Var Xs = tape.variable(S.X);
    ad::Var surrogate;
    for (std::size_t k = 0; k < plan.groups.size(); ++k) {
      const MatchGroup& g = plan.groups[k];
      ad::Var a = statistic_var(cfg.stat, cfg.trajectory.arch, theta,
                                ad::gather_rows(Xs, g.syn_index), g.syn_y,
                                tape.constant(syn_coeffs(g)), true);
      ad::Var term = ad::dot(a, tape.constant(m.disc[k].grad_a));
      surrogate = surrogate.valid() ? surrogate + term : term;
    }
    const std::array<ad::Var, 1> wrt{Xs};
    r.grad_X += tape.grad(surrogate, wrt).front().value();
  }
  return r;
}

// s_inner = S, differentiated through the inner updates and the inner lr.
DrawResult unrolled_draw(const SyntheticSet& S, const MatchPlan& plan, const ObjectiveConfig& cfg,
                         std::uint64_t seed, bool with_grad) {
  const TrajectoryConfig& tc = cfg.trajectory;
  const ArchDescriptor& arch = tc.arch;
  DrawResult r;

  ad::Tape tape;
  ad::Var Xs = tape.variable(S.X);
  ad::Var lr = tape.variable(Matrix::Constant(1, 1, S.lr));
  ad::Var theta = tape.variable(init_model(arch, tc.init, seed).theta);
  const Vector uniform = Vector::Constant(S.size(), 1.0 / static_cast<double>(S.size()));

  std::vector<ad::Var> states{theta};
  ad::Var velocity;
  for (std::size_t s = 0; s < tc.steps; ++s) {
    ad::Var loss = weighted_cross_entropy(forward(arch, theta, Xs).logits, S.y, uniform);
    const std::array<ad::Var, 1> wrt{theta};
    ad::Var g = tape.grad(loss, wrt, true).front();
    ad::Var v = g;
    if (tc.inner_sgd.weight_decay != 0.0) v = v + tc.inner_sgd.weight_decay * theta;
    if (velocity.valid() && tc.inner_sgd.momentum != 0.0) {
      v = v + tc.inner_sgd.momentum * velocity;
    }
    velocity = v;
    theta = theta - ad::scale_by(lr, v);
    states.push_back(theta);
  }

  ad::Var surrogate;
  auto add = [&](const ad::Var& term) { surrogate = surrogate.valid() ? surrogate + term : term; };
  for (std::size_t t : matched_steps(tc.steps)) {
    const ad::Var& th = states[t];
    double step_value = 0.0;
    for (const MatchGroup& g : plan.groups) {
      ad::Var a = statistic_var(cfg.stat, arch, th, ad::gather_rows(Xs, g.syn_index), g.syn_y,
                                tape.constant(syn_coeffs(g)), with_grad);
      ad::Var b = statistic_var(cfg.stat, arch, th, tape.constant(g.real_X), g.real_y,
                                tape.constant(g.real_coeff), with_grad);
      const auto blocks = statistic_block_sizes(cfg.stat, arch);
      const auto d = discrepancy(cfg.disc, Statistic{a.value().reshaped(), blocks},
                                 Statistic{b.value().reshaped(), blocks});
      step_value += d.value;
      r.degenerate += d.degenerate_blocks.size();
      if (with_grad) {
        add(ad::dot(a, tape.constant(d.grad_a)));
        add(ad::dot(b, tape.constant(d.grad_b)));
      }
    }
    r.per_step.push_back(step_value);
    r.value += step_value;
  }
  if (with_grad) {
    const std::array<ad::Var, 2> wrt{Xs, lr};
    const auto grads = tape.grad(surrogate, wrt);
    r.grad_X = grads[0].value();
    r.grad_lr = grads[1].scalar();
  }
  return r;
}

}  // namespace

ObjectiveResult objective(const SyntheticSet& S, const WeightedDataset& ds,
                          const ObjectiveConfig& cfg, std::uint64_t seed, bool with_grad,
                          std::size_t threads) {
  return objective(S, ds, ds.w, full_plan(ds, S, cfg.stat.per_class), cfg, seed, with_grad,
                   threads);
}

ObjectiveResult objective(const SyntheticSet& S, const WeightedDataset& ds,
                          const Vector& inner_weights, const MatchPlan& plan,
                          const ObjectiveConfig& cfg, std::uint64_t seed, bool with_grad,
                          std::size_t threads) {
  cfg.trajectory.validate();
  const std::size_t draws = cfg.trajectory.init_samples;
  std::vector<DrawResult> slots(draws);
  parallel_for(draws, threads, [&](std::size_t d) {
    const std::uint64_t s = init_draw_seed(seed, d);
    slots[d] = cfg.trajectory.unrolled
                   ? unrolled_draw(S, plan, cfg, s, with_grad)
                   : frozen_draw(S, ds, inner_weights, plan, cfg, s, with_grad);
  });

  // Ordered reduction: the result does not depend on the worker count.
  const double inv = 1.0 / static_cast<double>(draws);
  ObjectiveResult out;
  out.per_step.assign(slots.front().per_step.size(), 0.0);
  if (with_grad) out.grad_X = Matrix::Zero(S.X.rows(), S.X.cols());
  for (const DrawResult& r : slots) {
    out.value += r.value;
    out.grad_lr += r.grad_lr;
    out.degenerate_blocks += r.degenerate;
    for (std::size_t t = 0; t < r.per_step.size(); ++t) out.per_step[t] += r.per_step[t];
    if (with_grad) out.grad_X += r.grad_X;
  }
  out.value *= inv;
  out.grad_lr *= inv;
  for (double& v : out.per_step) v *= inv;
  if (with_grad) out.grad_X *= inv;
  return out;
}

}  // namespace iwd
