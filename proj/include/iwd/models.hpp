#pragma once

// Small classifiers over a flat parameter vector: linear (softmax
// regression), ReLU MLPs and a one-layer convolutional net, plus the
// momentum-SGD stepper used for inner and evaluation training.

#include "iwd/ad.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace iwd {

using Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;

enum class ArchKind { linear, mlp, tinyconv };

struct ArchDescriptor {
  ArchKind kind = ArchKind::linear;
  Index input_dim = 2;
  std::vector<Index> hidden;  // MLP widths; empty otherwise
  Index classes = 2;
  Index image_side = 0;       // tinyconv: input_dim == image_side^2
  Index conv_channels = 8;

  static ArchDescriptor linear(Index input_dim, Index classes);
  static ArchDescriptor mlp(Index input_dim, std::vector<Index> hidden, Index classes);
  /// 3x3 conv (same padding) -> ReLU -> global average pool -> linear head.
  static ArchDescriptor tinyconv(Index image_side, Index classes, Index channels = 8);

  /// Throws ContractError on invalid shapes.
  void validate() const;

  friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

std::string to_string(ArchKind kind);
ArchKind arch_kind_from_string(const std::string& name);

/// One parameter tensor inside the flat vector, stored column-major.
struct ParamBlock {
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  [[nodiscard]] Index size() const { return rows * cols; }
};

std::vector<ParamBlock> param_layout(const ArchDescriptor& arch);
Index param_count(const ArchDescriptor& arch);

enum class InitKind { kaiming_uniform, normal };

struct InitDistribution {
  InitKind kind = InitKind::kaiming_uniform;
  double sigma = 0.0;  // normal only
};

struct ModelState {
  ArchDescriptor arch;
  Vector theta;
  std::uint64_t seed = 0;
};

/// Kaiming-uniform draws U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and
/// biases alike. Deterministic in (arch, dist, seed).
ModelState init_model(const ArchDescriptor& arch, const InitDistribution& dist, std::uint64_t seed);

struct Forward {
  ad::Var logits;    // N x classes
  ad::Var features;  // penultimate activations (the input itself for linear)
};

Forward forward(const ArchDescriptor& arch, const ad::Var& theta, const ad::Var& inputs);

/// Sum_i w_i * cross_entropy(logits_i, y_i).
ad::Var weighted_cross_entropy(const ad::Var& logits, std::span<const int> labels,
                               const Vector& weights);

/// Same with the N x 1 weight column as a node, so per-instance derivatives
/// can be read off as gradients with respect to the weights.
ad::Var weighted_cross_entropy(const ad::Var& logits, std::span<const int> labels,
                               const ad::Var& weights);

ad::Var weighted_loss(const ArchDescriptor& arch, const ad::Var& theta, const ad::Var& inputs,
                      std::span<const int> labels, const Vector& weights);

/// Value of the weighted loss; throws ContractError on size mismatch.
double weighted_loss(const ModelState& model, const Matrix& X, std::span<const int> labels,
                     const Vector& weights);

/// The weighted loss as a function of the parameters (data captured by value).
ad::ScalarFunction loss_function(const ArchDescriptor& arch, Matrix X, Labels labels,
                                 Vector weights);

Matrix predict_logits(const ModelState& model, const Matrix& X);
Matrix penultimate_features(const ModelState& model, const Matrix& X);
double accuracy(const ModelState& model, const Matrix& X, std::span<const int> labels);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;

  void validate() const;
};

/// v' = momentum*v + g + weight_decay*theta;  theta' = theta - lr*v'.
std::pair<ModelState, Vector> sgd_step(const ModelState& model, const Vector& grad,
                                       const SgdConfig& cfg, const Vector& velocity);

/// `steps` full-batch SGD steps on the weighted loss.
ModelState train_full_batch(ModelState model, const Matrix& X, std::span<const int> labels,
                            const Vector& weights, const SgdConfig& cfg, std::size_t steps);

void check_weights(std::span<const int> labels, const Vector& weights, Index rows);

}  // namespace iwd
