#pragma once

// Real-data provisioning: toy generators, an IDX loader, label-noise
// injection and synthetic-set initialisation.

#include "iwd/models.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace iwd {

/// Real instances (rows of X) with labels and non-negative instance weights.
struct WeightedDataset {
  Matrix X;
  Labels y;
  Vector w;
  int class_count = 2;
  std::string provenance;

  [[nodiscard]] Index size() const { return X.rows(); }
  [[nodiscard]] Index dim() const { return X.cols(); }
  /// Indices of every instance labelled `c`, ascending.
  [[nodiscard]] std::vector<Index> class_indices(int c) const;
  /// Rows `idx` (in that order) with fresh uniform weights.
  [[nodiscard]] WeightedDataset subset(std::span<const Index> idx) const;
  void validate() const;
};

Vector uniform_weights(Index n);

/// Learnable synthetic inputs with fixed labels, `ipc` rows per class laid
/// out class-major, and the learnable evaluation learning rate.
struct SyntheticSet {
  Matrix X;
  Labels y;
  double lr = 0.01;
  Index ipc = 1;
  int class_count = 2;

  [[nodiscard]] Index size() const { return X.rows(); }
  void validate() const;
};

struct NoiseSpec {
  double flip_fraction = 0.0;
  std::uint64_t seed = 0;
};

struct FlipResult {
  WeightedDataset dataset;
  std::vector<Index> flipped;  // ascending
};

/// Class c is centred at (cos 2πc/C, sin 2πc/C, 0, ...) with isotropic
/// Gaussian noise of standard deviation `spread`. Rows are class-major.
WeightedDataset gen_gaussian_mixture(int classes, Index per_class, Index dim, double spread,
                                     std::uint64_t seed);

/// Interleaved half circles: class 0 on (cos t, sin t), class 1 on
/// (1 - cos t, 0.5 - sin t), t evenly spaced over [0, π].
WeightedDataset gen_two_moons(Index n, double noise, std::uint64_t seed);

struct IdxOptions {
  /// Standardise pixels (after scaling to [0,1]) to zero mean, unit variance.
  bool normalize = true;
};

WeightedDataset load_idx_pair(const std::filesystem::path& images,
                              const std::filesystem::path& labels, const IdxOptions& opts = {});

/// Writes features as unsigned bytes (round(255*x), clamped to [0,255]).
/// Requires dim to be a perfect square.
void save_idx_pair(const WeightedDataset& ds, const std::filesystem::path& images,
                   const std::filesystem::path& labels);

/// Flips exactly floor(f*N) labels, chosen by a seeded shuffle, each to a
/// uniformly drawn different class.
FlipResult flip_labels(const WeightedDataset& ds, const NoiseSpec& spec);

enum class SyntheticInit { random_real, class_mean, noise };

std::string to_string(SyntheticInit mode);
SyntheticInit synthetic_init_from_string(const std::string& name);

/// `jitter` adds N(0, jitter²) noise to every entry after initialisation;
/// class_mean rows are otherwise identical and stay so under matching.
SyntheticSet init_synthetic(const WeightedDataset& ds, Index ipc, SyntheticInit mode,
                            std::uint64_t seed, double lr = 0.01, double jitter = 0.0);

}  // namespace iwd
