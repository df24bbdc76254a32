#include "iwd/ad.hpp"

#include "iwd/errors.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace iwd::ad {

const Matrix& Var::value() const { return tape_->nodes_[id_].value; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("Var::scalar on a " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()) + " node");
  }
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::variable(Matrix value) {
  if (!value.allFinite()) throw NumericalError("non-finite leaf variable");
  nodes_.push_back(Node{std::move(value), {}, {}, true, "variable"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericalError("non-finite constant");
  nodes_.push_back(Node{std::move(value), {}, {}, false, "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Matrix value, std::vector<Var> parents, Backward backward) {
  if (!value.allFinite()) {
    throw NumericalError(std::string("non-finite value produced by '") + op + "' (node #" +
                         std::to_string(nodes_.size()) + ")");
  }
  bool needs = false;
  if (recording_) {
    needs = std::any_of(parents.begin(), parents.end(),
                        [](const Var& p) { return p.requires_grad(); });
  }
  if (!needs) {
    nodes_.push_back(Node{std::move(value), {}, {}, false, op});
  } else {
    nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), true, op});
  }
  return Var(this, nodes_.size() - 1);
}

namespace {

class RecordingGuard {
 public:
  RecordingGuard(bool& flag, bool value) : flag_(flag), saved_(flag) { flag_ = value; }
  ~RecordingGuard() { flag_ = saved_; }
  RecordingGuard(const RecordingGuard&) = delete;
  RecordingGuard& operator=(const RecordingGuard&) = delete;

 private:
  bool& flag_;
  bool saved_;
};

}  // namespace

std::vector<Var> Tape::grad(const Var& output, std::span<const Var> wrt, bool create_graph) {
  if (output.tape_ != this) throw ContractError("grad: output belongs to another tape");
  if (output.rows() != 1 || output.cols() != 1) throw ContractError("grad: output must be 1x1");

  std::size_t lowest = output.id_;
  for (const Var& w : wrt) {
    if (w.tape_ != this) throw ContractError("grad: wrt variable belongs to another tape");
    lowest = std::min(lowest, w.id_);
  }

  RecordingGuard guard(recording_, create_graph && recording_);

  std::vector<Var> adjoint(output.id_ + 1);
  adjoint[output.id_] = constant(Matrix::Ones(1, 1));

  for (std::size_t id = output.id_ + 1; id-- > lowest;) {
    if (!adjoint[id].valid()) continue;
    const Node& node = nodes_[id];
    if (!node.requires_grad || !node.backward) continue;
    std::vector<Var> contributions = node.backward(Var(this, id), adjoint[id]);
    for (std::size_t k = 0; k < contributions.size(); ++k) {
      const Var& c = contributions[k];
      if (!c.valid()) continue;
      const Var& parent = node.parents[k];
      if (!parent.requires_grad()) continue;
      Var& slot = adjoint[parent.id_];
      slot = slot.valid() ? slot + c : c;
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id_ <= output.id_ && adjoint[w.id_].valid()) {
      result.push_back(adjoint[w.id_]);
    } else {
      result.push_back(constant(Matrix::Zero(w.rows(), w.cols())));
    }
  }
  return result;
}

// ---- operations -----------------------------------------------------------

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
  }
}

void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  return a.tape().record("add", a.value() + b.value(), {a, b},
                         [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

Var operator-(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  return a.tape().record("sub", a.value() - b.value(), {a, b},
                         [](const Var&, const Var& g) { return std::vector<Var>{g, -g}; });
}

Var operator-(const Var& a) {
  return a.tape().record("neg", -a.value(), {a},
                         [](const Var&, const Var& g) { return std::vector<Var>{-g}; });
}

Var operator*(double s, const Var& a) {
  return a.tape().record("scale", s * a.value(), {a},
                         [s](const Var&, const Var& g) { return std::vector<Var>{s * g}; });
}

Var cwise_mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "cwise_mul");
  return a.tape().record("cwise_mul", a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](const Var&, const Var& g) {
                           return std::vector<Var>{
                               a.requires_grad() ? cwise_mul(g, b) : Var{},
                               b.requires_grad() ? cwise_mul(g, a) : Var{}};
                         });
}

Var scale_by(const Var& s, const Var& a) {
  require_same_tape(s, a);
  const double k = s.scalar();
  return a.tape().record("scale_by", k * a.value(), {s, a},
                         [s, a](const Var&, const Var& g) {
                           return std::vector<Var>{
                               s.requires_grad() ? sum(cwise_mul(g, a)) : Var{},
                               a.requires_grad() ? scale_by(s, g) : Var{}};
                         });
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) throw ContractError("matmul: inner dimension mismatch");
  Matrix v = a.value() * b.value();
  return a.tape().record("matmul", std::move(v), {a, b}, [a, b](const Var&, const Var& g) {
    return std::vector<Var>{a.requires_grad() ? matmul_nt(g, b) : Var{},
                            b.requires_grad() ? matmul_tn(a, g) : Var{}};
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.cols() != b.cols()) throw ContractError("matmul_nt: inner dimension mismatch");
  Matrix v = a.value() * b.value().transpose();
  return a.tape().record("matmul_nt", std::move(v), {a, b}, [a, b](const Var&, const Var& g) {
    return std::vector<Var>{a.requires_grad() ? matmul(g, b) : Var{},
                            b.requires_grad() ? matmul_tn(g, a) : Var{}};
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows()) throw ContractError("matmul_tn: inner dimension mismatch");
  Matrix v = a.value().transpose() * b.value();
  return a.tape().record("matmul_tn", std::move(v), {a, b}, [a, b](const Var&, const Var& g) {
    return std::vector<Var>{a.requires_grad() ? matmul_nt(b, g) : Var{},
                            b.requires_grad() ? matmul(a, g) : Var{}};
  });
}

Var transpose(const Var& a) {
  return a.tape().record("transpose", a.value().transpose(), {a},
                         [](const Var&, const Var& g) { return std::vector<Var>{transpose(g)}; });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractError("add_row: bad row shape");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return a.tape().record("add_row", std::move(v), {a, row}, [a, row](const Var&, const Var& g) {
    return std::vector<Var>{a.requires_grad() ? g : Var{},
                            row.requires_grad() ? colsum(g) : Var{}};
  });
}

Var colsum(const Var& a) {
  const Index n = a.rows();
  return a.tape().record("colsum", a.value().colwise().sum(), {a}, [n](const Var&, const Var& g) {
    return std::vector<Var>{broadcast_rows(g, n)};
  });
}

Var rowsum(const Var& a) {
  const Index c = a.cols();
  return a.tape().record("rowsum", a.value().rowwise().sum(), {a}, [c](const Var&, const Var& g) {
    return std::vector<Var>{broadcast_cols(g, c)};
  });
}

Var broadcast_rows(const Var& row, Index rows) {
  if (row.rows() != 1) throw ContractError("broadcast_rows: expected a 1xC row");
  return row.tape().record("broadcast_rows", row.value().replicate(rows, 1), {row},
                           [](const Var&, const Var& g) { return std::vector<Var>{colsum(g)}; });
}

Var broadcast_cols(const Var& col, Index cols) {
  if (col.cols() != 1) throw ContractError("broadcast_cols: expected an Nx1 column");
  return col.tape().record("broadcast_cols", col.value().replicate(1, cols), {col},
                           [](const Var&, const Var& g) { return std::vector<Var>{rowsum(g)}; });
}

Var sum(const Var& a) {
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape().record("sum", Matrix::Constant(1, 1, a.value().sum()), {a},
                         [r, c](const Var&, const Var& g) {
                           return std::vector<Var>{fill(g, r, c)};
                         });
}

Var fill(const Var& s, Index rows, Index cols) {
  return s.tape().record("fill", Matrix::Constant(rows, cols, s.scalar()), {s},
                         [](const Var&, const Var& g) { return std::vector<Var>{sum(g)}; });
}

Var exp(const Var& a) {
  return a.tape().record("exp", a.value().array().exp().matrix(), {a},
                         [](const Var& out, const Var& g) {
                           return std::vector<Var>{cwise_mul(g, out)};
                         });
}

Var relu(const Var& a) {
  Matrix mask = (a.value().array() > 0.0).cast<double>().matrix();
  Matrix v = a.value().cwiseMax(0.0);
  return a.tape().record("relu", std::move(v), {a},
                         [mask = std::move(mask)](const Var& out, const Var& g) {
                           return std::vector<Var>{cwise_mul(g, out.tape().constant(mask))};
                         });
}

namespace {

Matrix softmax_value(const Matrix& a) {
  Matrix shifted = a.colwise() - a.rowwise().maxCoeff();
  Matrix e = shifted.array().exp().matrix();
  return e.array().colwise() / e.rowwise().sum().array();
}

}  // namespace

Var softmax_rows(const Var& a) {
  const Index c = a.cols();
  return a.tape().record("softmax_rows", softmax_value(a.value()), {a},
                         [c](const Var& out, const Var& g) {
                           Var inner = broadcast_cols(rowsum(cwise_mul(g, out)), c);
                           return std::vector<Var>{cwise_mul(out, g - inner)};
                         });
}

Var logsumexp_rows(const Var& a) {
  const Matrix& x = a.value();
  Vector m = x.rowwise().maxCoeff();
  Vector lse = m.array() + (x.colwise() - m).array().exp().rowwise().sum().log();
  const Index c = a.cols();
  return a.tape().record("logsumexp_rows", Matrix(lse), {a},
                         [a, c](const Var&, const Var& g) {
                           return std::vector<Var>{cwise_mul(broadcast_cols(g, c), softmax_rows(a))};
                         });
}

Var slice(const Var& v, Index offset, Index rows, Index cols) {
  if (v.cols() != 1) throw ContractError("slice: expected a column vector");
  const Index length = v.rows();
  if (offset < 0 || offset + rows * cols > length) throw ContractError("slice: out of range");
  Matrix out = Eigen::Map<const Matrix>(v.value().data() + offset, rows, cols);
  return v.tape().record("slice", std::move(out), {v},
                         [offset, length](const Var&, const Var& g) {
                           return std::vector<Var>{embed(g, offset, length)};
                         });
}

Var embed(const Var& a, Index offset, Index length) {
  const Index r = a.rows();
  const Index c = a.cols();
  if (offset < 0 || offset + r * c > length) throw ContractError("embed: out of range");
  Matrix out = Matrix::Zero(length, 1);
  out.block(offset, 0, r * c, 1) = Eigen::Map<const Matrix>(a.value().data(), r * c, 1);
  return a.tape().record("embed", std::move(out), {a}, [offset, r, c](const Var&, const Var& g) {
    return std::vector<Var>{slice(g, offset, r, c)};
  });
}

Var reshape(const Var& a, Index rows, Index cols) {
  const Index r = a.rows();
  const Index c = a.cols();
  if (rows * cols != r * c) throw ContractError("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return a.tape().record("reshape", std::move(out), {a}, [r, c](const Var&, const Var& g) {
    return std::vector<Var>{reshape(g, r, c)};
  });
}

Var gather(const Var& a, IndexMap map, Index rows, Index cols) {
  if (static_cast<Index>(map->size()) != rows * cols) throw ContractError("gather: map size");
  const Index r = a.rows();
  const Index c = a.cols();
  Matrix out(rows, cols);
  const double* src = a.value().data();
  double* dst = out.data();
  for (Index k = 0; k < rows * cols; ++k) {
    const Index s = (*map)[static_cast<std::size_t>(k)];
    dst[k] = s >= 0 ? src[s] : 0.0;
  }
  return a.tape().record("gather", std::move(out), {a}, [map, r, c](const Var&, const Var& g) {
    return std::vector<Var>{scatter(g, map, r, c)};
  });
}

Var scatter(const Var& a, IndexMap map, Index rows, Index cols) {
  if (static_cast<Index>(map->size()) != a.rows() * a.cols()) {
    throw ContractError("scatter: map size");
  }
  const Index r = a.rows();
  const Index c = a.cols();
  Matrix out = Matrix::Zero(rows, cols);
  const double* src = a.value().data();
  double* dst = out.data();
  for (Index k = 0; k < r * c; ++k) {
    const Index d = (*map)[static_cast<std::size_t>(k)];
    if (d >= 0) dst[d] += src[k];
  }
  return a.tape().record("scatter", std::move(out), {a}, [map, r, c](const Var&, const Var& g) {
    return std::vector<Var>{gather(g, map, r, c)};
  });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  const Index n = a.rows();
  const Index m = static_cast<Index>(rows.size());
  auto map = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(m * a.cols()));
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index k = 0; k < m; ++k) {
      const Index r = rows[static_cast<std::size_t>(k)];
      if (r < 0 || r >= n) throw ContractError("gather_rows: row out of range");
      (*map)[static_cast<std::size_t>(k + j * m)] = r + j * n;
    }
  }
  return gather(a, std::move(map), m, a.cols());
}

Var segment_sum_rows(const Var& a, Index group) {
  if (group <= 0 || a.rows() % group != 0) throw ContractError("segment_sum_rows: bad group");
  const Index n = a.rows() / group;
  Matrix out = Matrix::Zero(n, a.cols());
  for (Index i = 0; i < n; ++i) out.row(i) = a.value().middleRows(i * group, group).colwise().sum();
  return a.tape().record("segment_sum_rows", std::move(out), {a},
                         [group](const Var&, const Var& g) {
                           return std::vector<Var>{repeat_rows(g, group)};
                         });
}

Var repeat_rows(const Var& a, Index group) {
  if (group <= 0) throw ContractError("repeat_rows: bad group");
  Matrix out(a.rows() * group, a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    out.middleRows(i * group, group) = a.value().row(i).replicate(group, 1);
  }
  return a.tape().record("repeat_rows", std::move(out), {a}, [group](const Var&, const Var& g) {
    return std::vector<Var>{segment_sum_rows(g, group)};
  });
}

// ---- ScalarFunction --------------------------------------------------------

ScalarFunction::ScalarFunction(Index dim, Builder builder)
    : dim_(dim), builder_(std::move(builder)) {
  if (dim_ <= 0) throw ContractError("ScalarFunction: dimension must be positive");
}

void ScalarFunction::check_dim(const Vector& x, const char* what) const {
  if (x.size() != dim_) {
    throw ContractError(std::string(what) + ": expected dimension " + std::to_string(dim_) +
                        ", got " + std::to_string(x.size()));
  }
}

double ScalarFunction::eval(const Vector& theta) const {
  check_dim(theta, "eval");
  Tape tape;
  Var t = tape.constant(theta);
  Var f = builder_(t);
  return f.scalar();
}

std::pair<double, Vector> ScalarFunction::value_and_grad(const Vector& theta) const {
  check_dim(theta, "grad");
  Tape tape;
  Var t = tape.variable(theta);
  Var f = builder_(t);
  const std::vector<Var> wrt{t};
  Vector g = tape.grad(f, wrt).front().value();
  return {f.scalar(), std::move(g)};
}

Vector ScalarFunction::grad(const Vector& theta) const { return value_and_grad(theta).second; }

Vector ScalarFunction::hvp(const Vector& theta, const Vector& v) const {
  check_dim(theta, "hvp");
  check_dim(v, "hvp direction");
  Tape tape;
  Var t = tape.variable(theta);
  Var f = builder_(t);
  const std::vector<Var> wrt{t};
  Var g = tape.grad(f, wrt, /*create_graph=*/true).front();
  Var inner = dot(g, tape.constant(v));
  return tape.grad(inner, wrt).front().value();
}

Vector fd_grad_oracle(const ScalarFunction& f, const Vector& theta, double h) {
  if (!(h > 0.0)) throw ContractError("fd_grad_oracle: h must be positive");
  Vector g(theta.size());
  Vector x = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    x[i] = theta[i] + h;
    const double up = f.eval(x);
    x[i] = theta[i] - h;
    const double down = f.eval(x);
    x[i] = theta[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace iwd::ad
