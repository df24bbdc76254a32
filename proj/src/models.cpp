#include "iwd/models.hpp"

#include "iwd/errors.hpp"
#include "iwd/random.hpp"

#include <cmath>
#include <memory>

namespace iwd {

ArchDescriptor ArchDescriptor::linear(Index input_dim, Index classes) {
  ArchDescriptor a;
  a.kind = ArchKind::linear;
  a.input_dim = input_dim;
  a.classes = classes;
  return a;
}

ArchDescriptor ArchDescriptor::mlp(Index input_dim, std::vector<Index> hidden, Index classes) {
  ArchDescriptor a;
  a.kind = ArchKind::mlp;
  a.input_dim = input_dim;
  a.hidden = std::move(hidden);
  a.classes = classes;
  return a;
}

ArchDescriptor ArchDescriptor::tinyconv(Index image_side, Index classes, Index channels) {
  ArchDescriptor a;
  a.kind = ArchKind::tinyconv;
  a.input_dim = image_side * image_side;
  a.image_side = image_side;
  a.classes = classes;
  a.conv_channels = channels;
  return a;
}

void ArchDescriptor::validate() const {
  if (classes < 2) throw ContractError("arch: classes must be >= 2");
  if (input_dim <= 0) throw ContractError("arch: input_dim must be positive");
  for (Index h : hidden) {
    if (h <= 0) throw ContractError("arch: hidden widths must be positive");
  }
  switch (kind) {
    case ArchKind::linear:
      if (!hidden.empty()) throw ContractError("arch: linear model takes no hidden layers");
      break;
    case ArchKind::mlp:
      if (hidden.empty() || hidden.size() > 2) {
        throw ContractError("arch: mlp needs one or two hidden layers");
      }
      break;
    case ArchKind::tinyconv:
      if (image_side <= 0 || image_side * image_side != input_dim) {
        throw ContractError("arch: tinyconv input_dim must equal image_side^2");
      }
      if (conv_channels <= 0) throw ContractError("arch: conv_channels must be positive");
      break;
  }
}

std::string to_string(ArchKind kind) {
  switch (kind) {
    case ArchKind::linear: return "linear";
    case ArchKind::mlp: return "mlp";
    case ArchKind::tinyconv: return "tinyconv";
  }
  return "?";
}

ArchKind arch_kind_from_string(const std::string& name) {
  if (name == "linear") return ArchKind::linear;
  if (name == "mlp") return ArchKind::mlp;
  if (name == "tinyconv") return ArchKind::tinyconv;
  throw ContractError("unknown architecture '" + name + "'");
}

std::vector<ParamBlock> param_layout(const ArchDescriptor& arch) {
  arch.validate();
  std::vector<ParamBlock> blocks;
  Index offset = 0;
  auto push = [&](std::string name, Index rows, Index cols) {
    blocks.push_back(ParamBlock{std::move(name), offset, rows, cols});
    offset += rows * cols;
  };
  switch (arch.kind) {
    case ArchKind::linear:
      push("fc.weight", arch.input_dim, arch.classes);
      push("fc.bias", 1, arch.classes);
      break;
    case ArchKind::mlp: {
      Index fan_in = arch.input_dim;
      for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
        push("hidden" + std::to_string(l) + ".weight", fan_in, arch.hidden[l]);
        push("hidden" + std::to_string(l) + ".bias", 1, arch.hidden[l]);
        fan_in = arch.hidden[l];
      }
      push("fc.weight", fan_in, arch.classes);
      push("fc.bias", 1, arch.classes);
      break;
    }
    case ArchKind::tinyconv:
      push("conv.weight", 9, arch.conv_channels);
      push("conv.bias", 1, arch.conv_channels);
      push("fc.weight", arch.conv_channels, arch.classes);
      push("fc.bias", 1, arch.classes);
      break;
  }
  return blocks;
}

Index param_count(const ArchDescriptor& arch) {
  const auto layout = param_layout(arch);
  return layout.back().offset + layout.back().size();
}

ModelState init_model(const ArchDescriptor& arch, const InitDistribution& dist,
                      std::uint64_t seed) {
  const auto layout = param_layout(arch);
  ModelState m{arch, Vector::Zero(param_count(arch)), seed};
  Rng rng = make_rng(seed);
  // Biases use the fan-in of the weight block that precedes them.
  Index fan_in = 1;
  for (const ParamBlock& b : layout) {
    if (b.name.ends_with(".weight")) fan_in = b.rows;
    if (dist.kind == InitKind::normal) {
      if (dist.sigma < 0.0) throw ContractError("init: sigma must be >= 0");
      if (dist.sigma == 0.0) continue;
      std::normal_distribution<double> nd(0.0, dist.sigma);
      for (Index k = 0; k < b.size(); ++k) m.theta[b.offset + k] = nd(rng);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> ud(-bound, bound);
      for (Index k = 0; k < b.size(); ++k) m.theta[b.offset + k] = ud(rng);
    }
  }
  return m;
}

namespace {

ad::Var block_var(const ad::Var& theta, const ParamBlock& b) {
  return ad::slice(theta, b.offset, b.rows, b.cols);
}

ad::IndexMap im2col_map(Index n, Index side) {
  const Index pixels = side * side;
  const Index rows = n * pixels;
  auto map = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(rows * 9), -1);
  for (Index i = 0; i < n; ++i) {
    for (Index r = 0; r < side; ++r) {
      for (Index c = 0; c < side; ++c) {
        const Index row = i * pixels + r * side + c;
        for (Index dr = -1; dr <= 1; ++dr) {
          for (Index dc = -1; dc <= 1; ++dc) {
            const Index k = (dr + 1) * 3 + (dc + 1);
            const Index rr = r + dr;
            const Index cc = c + dc;
            if (rr < 0 || rr >= side || cc < 0 || cc >= side) continue;
            (*map)[static_cast<std::size_t>(row + k * rows)] = i + (rr * side + cc) * n;
          }
        }
      }
    }
  }
  return map;
}

}  // namespace

Forward forward(const ArchDescriptor& arch, const ad::Var& theta, const ad::Var& inputs) {
  const auto layout = param_layout(arch);
  if (theta.rows() != param_count(arch) || theta.cols() != 1) {
    throw ContractError("forward: parameter vector has wrong dimension");
  }
  if (inputs.cols() != arch.input_dim) throw ContractError("forward: input width mismatch");

  switch (arch.kind) {
    case ArchKind::linear: {
      ad::Var logits = ad::add_row(ad::matmul(inputs, block_var(theta, layout[0])),
                                   block_var(theta, layout[1]));
      return {logits, inputs};
    }
    case ArchKind::mlp: {
      ad::Var h = inputs;
      std::size_t k = 0;
      for (std::size_t l = 0; l < arch.hidden.size(); ++l, k += 2) {
        h = ad::relu(ad::add_row(ad::matmul(h, block_var(theta, layout[k])),
                                 block_var(theta, layout[k + 1])));
      }
      ad::Var logits = ad::add_row(ad::matmul(h, block_var(theta, layout[k])),
                                   block_var(theta, layout[k + 1]));
      return {logits, h};
    }
    case ArchKind::tinyconv: {
      const Index n = inputs.rows();
      const Index side = arch.image_side;
      const Index pixels = side * side;
      ad::Var patches = ad::gather(inputs, im2col_map(n, side), n * pixels, 9);
      ad::Var conv = ad::relu(ad::add_row(ad::matmul(patches, block_var(theta, layout[0])),
                                          block_var(theta, layout[1])));
      ad::Var pooled = (1.0 / static_cast<double>(pixels)) * ad::segment_sum_rows(conv, pixels);
      ad::Var logits = ad::add_row(ad::matmul(pooled, block_var(theta, layout[2])),
                                   block_var(theta, layout[3]));
      return {logits, pooled};
    }
  }
  throw ContractError("forward: unknown architecture");
}

void check_weights(std::span<const int> labels, const Vector& weights, Index rows) {
  if (static_cast<Index>(labels.size()) != rows || weights.size() != rows) {
    throw ContractError("weighted loss: |X|, |y| and |w| must agree (" + std::to_string(rows) +
                        ", " + std::to_string(labels.size()) + ", " +
                        std::to_string(weights.size()) + ")");
  }
  if ((weights.array() < 0.0).any()) throw ContractError("weighted loss: negative weight");
}

ad::Var weighted_cross_entropy(const ad::Var& logits, std::span<const int> labels,
                               const Vector& weights) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  check_weights(labels, weights, n);
  ad::Tape& tape = logits.tape();
  Matrix picked = Matrix::Zero(n, c);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw ContractError("weighted loss: label out of range");
    picked(i, y) = weights[i];
  }
  ad::Var lse = ad::logsumexp_rows(logits);
  return ad::dot(lse, tape.constant(weights)) - ad::dot(logits, tape.constant(picked));
}

ad::Var weighted_cross_entropy(const ad::Var& logits, std::span<const int> labels,
                               const ad::Var& weights) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  if (weights.cols() != 1 || weights.rows() != n || static_cast<Index>(labels.size()) != n) {
    throw ContractError("weighted loss: |X|, |y| and |w| must agree");
  }
  Matrix onehot = Matrix::Zero(n, c);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw ContractError("weighted loss: label out of range");
    onehot(i, y) = 1.0;
  }
  ad::Tape& tape = logits.tape();
  ad::Var picked = ad::cwise_mul(ad::broadcast_cols(weights, c), tape.constant(onehot));
  return ad::dot(ad::logsumexp_rows(logits), weights) - ad::dot(logits, picked);
}

ad::Var weighted_loss(const ArchDescriptor& arch, const ad::Var& theta, const ad::Var& inputs,
                      std::span<const int> labels, const Vector& weights) {
  return weighted_cross_entropy(forward(arch, theta, inputs).logits, labels, weights);
}

double weighted_loss(const ModelState& model, const Matrix& X, std::span<const int> labels,
                     const Vector& weights) {
  check_weights(labels, weights, X.rows());
  ad::Tape tape;
  return weighted_loss(model.arch, tape.constant(model.theta), tape.constant(X), labels, weights)
      .scalar();
}

ad::ScalarFunction loss_function(const ArchDescriptor& arch, Matrix X, Labels labels,
                                 Vector weights) {
  check_weights(labels, weights, X.rows());
  auto data = std::make_shared<const std::tuple<Matrix, Labels, Vector>>(
      std::move(X), std::move(labels), std::move(weights));
  return ad::ScalarFunction(param_count(arch), [arch, data](const ad::Var& theta) {
    const auto& [x, y, w] = *data;
    return weighted_loss(arch, theta, theta.tape().constant(x), y, w);
  });
}

Matrix predict_logits(const ModelState& model, const Matrix& X) {
  ad::Tape tape;
  return forward(model.arch, tape.constant(model.theta), tape.constant(X)).logits.value();
}

Matrix penultimate_features(const ModelState& model, const Matrix& X) {
  ad::Tape tape;
  return forward(model.arch, tape.constant(model.theta), tape.constant(X)).features.value();
}

double accuracy(const ModelState& model, const Matrix& X, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != X.rows()) throw ContractError("accuracy: size mismatch");
  if (X.rows() == 0) return 0.0;
  const Matrix logits = predict_logits(model, X);
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(X.rows());
}

void SgdConfig::validate() const {
  if (!(lr >= 0.0)) throw ContractError("sgd: lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("sgd: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ContractError("sgd: weight_decay must be >= 0");
}

std::pair<ModelState, Vector> sgd_step(const ModelState& model, const Vector& grad,
                                       const SgdConfig& cfg, const Vector& velocity) {
  if (grad.size() != model.theta.size() || velocity.size() != model.theta.size()) {
    throw ContractError("sgd_step: dimension mismatch");
  }
  Vector v = cfg.momentum * velocity + grad + cfg.weight_decay * model.theta;
  ModelState next = model;
  next.theta = model.theta - cfg.lr * v;
  return {std::move(next), std::move(v)};
}

ModelState train_full_batch(ModelState model, const Matrix& X, std::span<const int> labels,
                            const Vector& weights, const SgdConfig& cfg, std::size_t steps) {
  cfg.validate();
  const ad::ScalarFunction f =
      loss_function(model.arch, X, Labels(labels.begin(), labels.end()), weights);
  Vector velocity = Vector::Zero(model.theta.size());
  for (std::size_t s = 0; s < steps; ++s) {
    auto [next, v] = sgd_step(model, f.grad(model.theta), cfg, velocity);
    model = std::move(next);
    velocity = std::move(v);
  }
  return model;
}

}  // namespace iwd
