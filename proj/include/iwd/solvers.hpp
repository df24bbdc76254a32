#pragma once

// Solvers for (H + λI) x = g given only products with H.

#include "iwd/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>

namespace iwd {

enum class SolverMethod { cg, lissa, dense };

std::string to_string(SolverMethod m);
SolverMethod solver_method_from_string(const std::string& name);

struct LissaConfig {
  double scale = 10.0;
  std::size_t depth = 100;
  std::size_t repeats = 4;
};

struct HvpSolverConfig {
  SolverMethod method = SolverMethod::cg;
  double damping = 0.01;
  double tol = 1e-10;
  std::size_t max_iter = 1000;
  LissaConfig lissa;

  /// Throws ContractError; `allow_zero_damping` admits λ = 0 for callers
  /// that know H is positive definite.
  void validate(bool allow_zero_damping = false) const;
};

inline constexpr Eigen::Index kMaxDenseDim = 2000;

template <typename Scalar>
struct SolveResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x;
  Scalar residual = 0;  // ‖(H+λI)x − g‖ / ‖g‖
  std::size_t iterations = 0;
  bool converged = false;
};

template <typename Scalar>
using HvpFn = std::function<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>&)>;

/// Products for LiSSA's repeat `r`, recursion depth `k`. Lets callers use
/// minibatch Hessians; a deterministic HVP just ignores both indices.
template <typename Scalar>
using SampledHvpFn = std::function<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>&, std::size_t r, std::size_t k)>;

namespace detail {

template <typename Scalar>
Scalar relative_residual(const HvpFn<Scalar>& hvp, Scalar damping,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& g) {
  const Scalar gn = g.norm();
  const Scalar rn = (hvp(x) + damping * x - g).norm();
  return gn > Scalar(0) ? rn / gn : rn;
}

}  // namespace detail

/// Conjugate gradients on the damped system. Stops when the residual drops
/// to tol·‖g‖ or after max_iter iterations (converged = false). Negative or
/// zero curvature along a search direction throws SolverError.
template <typename Scalar>
SolveResult<Scalar> conjugate_gradient(const HvpFn<Scalar>& hvp,
                                       const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& g,
                                       Scalar damping, Scalar tol, std::size_t max_iter) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  SolveResult<Scalar> out;
  out.x = Vec::Zero(g.size());
  const Scalar gn = g.norm();
  if (gn == Scalar(0)) {
    out.converged = true;
    return out;
  }
  Vec r = g;
  Vec p = r;
  Scalar rr = r.squaredNorm();
  for (std::size_t it = 0; it < max_iter; ++it) {
    if (std::sqrt(rr) <= tol * gn) break;
    const Vec Ap = hvp(p) + damping * p;
    const Scalar curvature = p.dot(Ap);
    if (!(curvature > Scalar(0))) {
      throw SolverError("cg: non-positive curvature " + std::to_string(static_cast<double>(curvature)) +
                        " at iteration " + std::to_string(it) +
                        " (system is not positive definite; increase damping)");
    }
    const Scalar alpha = rr / curvature;
    out.x += alpha * p;
    r -= alpha * Ap;
    const Scalar rr_next = r.squaredNorm();
    p = r + (rr_next / rr) * p;
    rr = rr_next;
    out.iterations = it + 1;
  }
  out.residual = detail::relative_residual(hvp, damping, out.x, g);
  out.converged = std::sqrt(rr) <= tol * gn;
  return out;
}

/// Builds H column by column from dim products and solves directly. An
/// oracle for small problems only.
template <typename Scalar>
SolveResult<Scalar> dense_solve(const HvpFn<Scalar>& hvp,
                                const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& g,
                                Scalar damping) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index n = g.size();
  if (n > kMaxDenseDim) {
    throw ContractError("dense solve: dimension " + std::to_string(n) + " exceeds " +
                        std::to_string(kMaxDenseDim));
  }
  Mat A(n, n);
  for (Eigen::Index k = 0; k < n; ++k) A.col(k) = hvp(Vec::Unit(n, k));
  A = Scalar(0.5) * (A + A.transpose()).eval();
  A.diagonal().array() += damping;
  SolveResult<Scalar> out;
  out.x = A.ldlt().solve(g);
  out.iterations = static_cast<std::size_t>(n);
  out.residual = detail::relative_residual(hvp, damping, out.x, g);
  out.converged = out.x.allFinite();
  return out;
}

/// Truncated Neumann series x ≈ Σ_k (I − (H+λI)/scale)^k g / scale, averaged
/// over repeats.
template <typename Scalar>
SolveResult<Scalar> lissa(const SampledHvpFn<Scalar>& hvp,
                          const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& g, Scalar damping,
                          const LissaConfig& cfg) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const auto scale = static_cast<Scalar>(cfg.scale);
  Vec sum = Vec::Zero(g.size());
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    Vec h = g;
    for (std::size_t k = 0; k < cfg.depth; ++k) {
      h = g + h - (hvp(h, r, k) + damping * h) / scale;
      if (!h.allFinite()) {
        throw SolverError("lissa: diverged at repeat " + std::to_string(r) + ", depth " +
                          std::to_string(k) + " (scale too small)");
      }
    }
    sum += h / scale;
  }
  SolveResult<Scalar> out;
  out.x = sum / static_cast<Scalar>(cfg.repeats);
  out.iterations = cfg.repeats * cfg.depth;
  out.converged = true;
  return out;
}

/// Dispatches on cfg.method. For LiSSA the plain HVP is used at every depth;
/// the residual is always measured with `hvp`.
template <typename Scalar>
SolveResult<Scalar> solve_inverse_hvp(const HvpFn<Scalar>& hvp,
                                      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& g,
                                      const HvpSolverConfig& cfg,
                                      const SampledHvpFn<Scalar>& sampled = {}) {
  const auto damping = static_cast<Scalar>(cfg.damping);
  switch (cfg.method) {
    case SolverMethod::cg:
      return conjugate_gradient<Scalar>(hvp, g, damping, static_cast<Scalar>(cfg.tol), cfg.max_iter);
    case SolverMethod::dense:
      return dense_solve<Scalar>(hvp, g, damping);
    case SolverMethod::lissa: {
      SampledHvpFn<Scalar> fn = sampled;
      if (!fn) fn = [&hvp](const auto& v, std::size_t, std::size_t) { return hvp(v); };
      SolveResult<Scalar> out = lissa<Scalar>(fn, g, damping, cfg.lissa);
      out.residual = detail::relative_residual(hvp, damping, out.x, g);
      out.converged = out.residual <= static_cast<Scalar>(cfg.tol);
      return out;
    }
  }
  throw ContractError("solve_inverse_hvp: unknown method");
}

inline std::string to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::cg: return "cg";
    case SolverMethod::lissa: return "lissa";
    case SolverMethod::dense: return "dense";
  }
  return "?";
}

inline SolverMethod solver_method_from_string(const std::string& name) {
  if (name == "cg") return SolverMethod::cg;
  if (name == "lissa") return SolverMethod::lissa;
  if (name == "dense") return SolverMethod::dense;
  throw ContractError("unknown solver '" + name + "'");
}

inline void HvpSolverConfig::validate(bool allow_zero_damping) const {
  if (allow_zero_damping ? !(damping >= 0.0) : !(damping > 0.0)) {
    throw ContractError("solver: damping must be positive");
  }
  if (!(tol > 0.0)) throw ContractError("solver: tol must be positive");
  if (max_iter == 0) throw ContractError("solver: max_iter must be positive");
  if (method == SolverMethod::lissa) {
    if (!(lissa.scale > 0.0) || lissa.depth == 0 || lissa.repeats == 0) {
      throw ContractError("solver: lissa scale, depth and repeats must be positive");
    }
  }
}

}  // namespace iwd
