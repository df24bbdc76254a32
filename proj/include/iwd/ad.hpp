#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// Every backward rule is itself expressed with recorded operations, so a
// gradient computed with `create_graph = true` is an ordinary node on the
// tape and can be differentiated again. Hessian-vector products are formed
// as the gradient of <grad f, v> with v held constant.
//
// A Tape is single-use scratch space: build it, evaluate, throw it away.
// Tapes are not shared between threads.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace iwd::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }
  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Returns one adjoint per parent (an invalid Var means "no contribution").
  using Backward = std::function<std::vector<Var>(const Var& out, const Var& adjoint)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that gradients can be taken with respect to.
  Var variable(Matrix value);
  Var constant(Matrix value);

  /// Appends an operation node. Throws NumericalError if `value` is not
  /// finite. The backward rule is dropped when no parent requires a gradient
  /// or when the tape is replaying a non-differentiable backward pass.
  Var record(const char* op, Matrix value, std::vector<Var> parents, Backward backward);

  /// Gradients of the 1x1 node `output` with respect to each of `wrt`.
  /// With `create_graph` the results are differentiable nodes.
  std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph = false);

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Matrix value;
    std::vector<Var> parents;
    Backward backward;
    bool requires_grad = false;
    const char* op = "";
  };

  // deque: references to existing nodes survive push_back during backward.
  std::deque<Node> nodes_;
  bool recording_ = true;
};

// ---- operations -----------------------------------------------------------

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double s, const Var& a);
inline Var operator*(const Var& a, double s) { return s * a; }

/// Element-wise product of equally shaped operands.
Var cwise_mul(const Var& a, const Var& b);
/// Multiplies every entry of `a` by the 1x1 node `s`.
Var scale_by(const Var& s, const Var& a);

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
/// a^T * b
Var matmul_tn(const Var& a, const Var& b);
Var transpose(const Var& a);

/// Adds the 1xC row `row` to every row of `a`.
Var add_row(const Var& a, const Var& row);
Var colsum(const Var& a);
Var rowsum(const Var& a);
Var broadcast_rows(const Var& row, Index rows);
Var broadcast_cols(const Var& col, Index cols);
/// Sum of all entries, as a 1x1 node.
Var sum(const Var& a);
/// rows x cols matrix filled with the 1x1 node `s`.
Var fill(const Var& s, Index rows, Index cols);
inline Var dot(const Var& a, const Var& b) { return sum(cwise_mul(a, b)); }

Var exp(const Var& a);
Var relu(const Var& a);
Var softmax_rows(const Var& a);
/// Row-wise log-sum-exp, N x C -> N x 1.
Var logsumexp_rows(const Var& a);

/// rows x cols view (column-major) of entries [offset, offset + rows*cols) of
/// the column vector `v`.
Var slice(const Var& v, Index offset, Index rows, Index cols);
/// Inverse of slice: zero column vector of length `length` holding `a`.
Var embed(const Var& a, Index offset, Index length);
Var reshape(const Var& a, Index rows, Index cols);

/// Flat index map for gather/scatter; -1 entries read as zero.
using IndexMap = std::shared_ptr<const std::vector<Index>>;
/// out.flat[k] = a.flat[map[k]]
Var gather(const Var& a, IndexMap map, Index rows, Index cols);
/// out.flat[map[k]] += a.flat[k]; adjoint of gather.
Var scatter(const Var& a, IndexMap map, Index rows, Index cols);
/// Rows `rows` of `a`, in order.
Var gather_rows(const Var& a, std::span<const Index> rows);
/// Sums consecutive groups of `group` rows.
Var segment_sum_rows(const Var& a, Index group);
/// Repeats each row `group` times; adjoint of segment_sum_rows.
Var repeat_rows(const Var& a, Index group);

// ---- scalar functions of a parameter vector --------------------------------

/// A map from a parameter vector of fixed dimension to a real scalar,
/// described by a builder that records the computation on a fresh tape.
/// Immutable; concurrent evaluation with distinct inputs is safe as long as
/// the builder's captured data is read-only.
class ScalarFunction {
 public:
  using Builder = std::function<Var(const Var& theta)>;

  ScalarFunction(Index dim, Builder builder);

  [[nodiscard]] Index dim() const noexcept { return dim_; }

  [[nodiscard]] double eval(const Vector& theta) const;
  [[nodiscard]] Vector grad(const Vector& theta) const;
  [[nodiscard]] std::pair<double, Vector> value_and_grad(const Vector& theta) const;
  /// Hessian-vector product via double backward.
  [[nodiscard]] Vector hvp(const Vector& theta, const Vector& v) const;

 private:
  void check_dim(const Vector& x, const char* what) const;

  Index dim_;
  Builder builder_;
};

/// Central-difference gradient; a test oracle, not used on hot paths.
Vector fd_grad_oracle(const ScalarFunction& f, const Vector& theta, double h);

}  // namespace iwd::ad
