#include "iwd/data.hpp"

#include "iwd/errors.hpp"
#include "iwd/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

namespace iwd {

std::vector<Index> WeightedDataset::class_indices(int c) const {
  std::vector<Index> out;
  for (Index i = 0; i < size(); ++i) {
    if (y[static_cast<std::size_t>(i)] == c) out.push_back(i);
  }
  return out;
}

WeightedDataset WeightedDataset::subset(std::span<const Index> idx) const {
  WeightedDataset out;
  out.X.resize(static_cast<Index>(idx.size()), dim());
  out.y.reserve(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= size()) throw ContractError("subset: index out of range");
    out.X.row(static_cast<Index>(k)) = X.row(idx[k]);
    out.y.push_back(y[static_cast<std::size_t>(idx[k])]);
  }
  out.w = uniform_weights(static_cast<Index>(idx.size()));
  out.class_count = class_count;
  out.provenance = provenance + "/subset";
  return out;
}

void WeightedDataset::validate() const {
  if (size() <= 0) throw ContractError("dataset: N must be positive");
  if (static_cast<Index>(y.size()) != size() || w.size() != size()) {
    throw ContractError("dataset: X, y, w sizes disagree");
  }
  if (class_count < 2) throw ContractError("dataset: class_count must be >= 2");
  if ((w.array() < 0.0).any()) throw ContractError("dataset: negative weight");
  if (!X.allFinite()) throw ContractError("dataset: non-finite feature");
  for (int label : y) {
    if (label < 0 || label >= class_count) throw ContractError("dataset: label out of range");
  }
}

Vector uniform_weights(Index n) {
  return Vector::Constant(n, 1.0 / static_cast<double>(n));
}

void SyntheticSet::validate() const {
  if (ipc < 1) throw ContractError("synthetic set: ipc must be >= 1");
  if (size() != ipc * class_count || static_cast<Index>(y.size()) != size()) {
    throw ContractError("synthetic set: size must equal ipc * class_count");
  }
  for (int c = 0; c < class_count; ++c) {
    if (std::count(y.begin(), y.end(), c) != ipc) {
      throw ContractError("synthetic set: class " + std::to_string(c) + " needs exactly ipc rows");
    }
  }
  if (!X.allFinite()) throw ContractError("synthetic set: non-finite feature");
  if (!(lr > 0.0)) throw ContractError("synthetic set: lr must be positive");
}

WeightedDataset gen_gaussian_mixture(int classes, Index per_class, Index dim, double spread,
                                     std::uint64_t seed) {
  if (classes < 2 || per_class < 1 || dim < 2) {
    throw ContractError("gaussian mixture: need classes >= 2, per_class >= 1, dim >= 2");
  }
  if (spread < 0.0) throw ContractError("gaussian mixture: spread must be >= 0");
  const Index n = classes * per_class;
  WeightedDataset ds;
  ds.X = Matrix::Zero(n, dim);
  ds.y.resize(static_cast<std::size_t>(n));
  ds.class_count = classes;
  ds.provenance = "gaussian_mixture";
  Rng rng = make_rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int c = 0; c < classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / classes;
    for (Index k = 0; k < per_class; ++k) {
      const Index i = c * per_class + k;
      ds.y[static_cast<std::size_t>(i)] = c;
      ds.X(i, 0) = std::cos(angle);
      ds.X(i, 1) = std::sin(angle);
      if (spread > 0.0) {
        for (Index j = 0; j < dim; ++j) ds.X(i, j) += spread * nd(rng);
      }
    }
  }
  ds.w = uniform_weights(n);
  return ds;
}

WeightedDataset gen_two_moons(Index n, double noise, std::uint64_t seed) {
  if (n < 2) throw ContractError("two moons: n must be >= 2");
  if (noise < 0.0) throw ContractError("two moons: noise must be >= 0");
  const Index n_outer = n / 2;
  const Index n_inner = n - n_outer;
  WeightedDataset ds;
  ds.X.resize(n, 2);
  ds.y.resize(static_cast<std::size_t>(n));
  ds.class_count = 2;
  ds.provenance = "two_moons";
  auto t_at = [](Index k, Index count) {
    return count == 1 ? 0.0 : std::numbers::pi * static_cast<double>(k) / (count - 1);
  };
  for (Index k = 0; k < n_outer; ++k) {
    const double t = t_at(k, n_outer);
    ds.X(k, 0) = std::cos(t);
    ds.X(k, 1) = std::sin(t);
    ds.y[static_cast<std::size_t>(k)] = 0;
  }
  for (Index k = 0; k < n_inner; ++k) {
    const double t = t_at(k, n_inner);
    ds.X(n_outer + k, 0) = 1.0 - std::cos(t);
    ds.X(n_outer + k, 1) = 0.5 - std::sin(t);
    ds.y[static_cast<std::size_t>(n_outer + k)] = 1;
  }
  if (noise > 0.0) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> nd(0.0, noise);
    for (Index i = 0; i < n; ++i) {
      ds.X(i, 0) += nd(rng);
      ds.X(i, 1) += nd(rng);
    }
  }
  ds.w = uniform_weights(n);
  return ds;
}

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open (byte offset 0)");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(path.string() + ": truncated header at byte offset " +
                      std::to_string(offset));
  }
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

WeightedDataset load_idx_pair(const std::filesystem::path& images,
                              const std::filesystem::path& labels, const IdxOptions& opts) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);

  const std::uint32_t img_magic = read_be32(img, 0, images);
  if (img_magic != kImageMagic) {
    throw FormatError(images.string() + ": bad magic number at byte offset 0 (expected 0x00000803)");
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels);
  if (lab_magic != kLabelMagic) {
    throw FormatError(labels.string() + ": bad magic number at byte offset 0 (expected 0x00000801)");
  }
  const std::size_t n = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t n_labels = read_be32(lab, 4, labels);
  if (n_labels != n) {
    throw FormatError(labels.string() + ": label count " + std::to_string(n_labels) +
                      " at byte offset 4 does not match image count " + std::to_string(n));
  }
  if (n == 0 || rows == 0 || cols == 0) {
    throw FormatError(images.string() + ": empty dimension in header at byte offset 4");
  }
  const std::size_t pixels = rows * cols;
  const std::size_t img_end = 16 + n * pixels;
  if (img.size() < img_end) {
    throw FormatError(images.string() + ": truncated pixel block at byte offset " +
                      std::to_string(img.size()) + " (expected " + std::to_string(img_end) +
                      " bytes)");
  }
  if (lab.size() < 8 + n) {
    throw FormatError(labels.string() + ": truncated label block at byte offset " +
                      std::to_string(lab.size()));
  }

  WeightedDataset ds;
  ds.X.resize(static_cast<Index>(n), static_cast<Index>(pixels));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      ds.X(static_cast<Index>(i), static_cast<Index>(p)) = img[16 + i * pixels + p] / 255.0;
    }
  }
  ds.y.resize(n);
  int max_label = 1;
  for (std::size_t i = 0; i < n; ++i) {
    ds.y[i] = lab[8 + i];
    max_label = std::max(max_label, ds.y[i]);
  }
  ds.class_count = max_label + 1;
  ds.w = uniform_weights(static_cast<Index>(n));
  ds.provenance = "idx:" + images.filename().string();

  if (opts.normalize) {
    const double mean = ds.X.mean();
    const double var = (ds.X.array() - mean).square().mean();
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    ds.X = ((ds.X.array() - mean) / sd).matrix();
  }
  return ds;
}

void save_idx_pair(const WeightedDataset& ds, const std::filesystem::path& images,
                   const std::filesystem::path& labels) {
  const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(ds.dim()))));
  if (side * side != ds.dim()) throw ContractError("save_idx_pair: dim must be a perfect square");
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw FormatError("save_idx_pair: cannot open output files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(ds.size()));
  write_be32(img, static_cast<std::uint32_t>(side));
  write_be32(img, static_cast<std::uint32_t>(side));
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index p = 0; p < ds.dim(); ++p) {
      const double v = std::clamp(std::round(ds.X(i, p) * 255.0), 0.0, 255.0);
      img.put(static_cast<char>(static_cast<unsigned char>(v)));
    }
  }
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int label : ds.y) lab.put(static_cast<char>(static_cast<unsigned char>(label)));
}

FlipResult flip_labels(const WeightedDataset& ds, const NoiseSpec& spec) {
  if (!(spec.flip_fraction >= 0.0 && spec.flip_fraction <= 1.0)) {
    throw ContractError("flip_labels: flip_fraction must be in [0,1]");
  }
  const Index n = ds.size();
  const auto count = static_cast<Index>(std::floor(spec.flip_fraction * static_cast<double>(n)));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);

  FlipResult out{ds, {order.begin(), order.begin() + count}};
  std::sort(out.flipped.begin(), out.flipped.end());
  std::uniform_int_distribution<int> other(1, ds.class_count - 1);
  for (Index i : out.flipped) {
    int& label = out.dataset.y[static_cast<std::size_t>(i)];
    label = (label + other(rng)) % ds.class_count;
  }
  out.dataset.provenance = ds.provenance + "/flipped";
  return out;
}

std::string to_string(SyntheticInit mode) {
  switch (mode) {
    case SyntheticInit::random_real: return "random-real";
    case SyntheticInit::class_mean: return "class-mean";
    case SyntheticInit::noise: return "noise";
  }
  return "?";
}

SyntheticInit synthetic_init_from_string(const std::string& name) {
  if (name == "random-real") return SyntheticInit::random_real;
  if (name == "class-mean") return SyntheticInit::class_mean;
  if (name == "noise") return SyntheticInit::noise;
  throw ContractError("unknown synthetic init mode '" + name + "'");
}

SyntheticSet init_synthetic(const WeightedDataset& ds, Index ipc, SyntheticInit mode,
                            std::uint64_t seed, double lr, double jitter) {
  if (ipc < 1) throw ContractError("init_synthetic: ipc must be >= 1");
  if (!(jitter >= 0.0)) throw ContractError("init_synthetic: jitter must be >= 0");
  SyntheticSet s;
  s.ipc = ipc;
  s.class_count = ds.class_count;
  s.lr = lr;
  s.X.resize(ipc * ds.class_count, ds.dim());
  s.y.resize(static_cast<std::size_t>(s.X.rows()));
  Rng rng = make_rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int c = 0; c < ds.class_count; ++c) {
    std::vector<Index> members = ds.class_indices(c);
    if (mode == SyntheticInit::random_real && static_cast<Index>(members.size()) < ipc) {
      throw ContractError("init_synthetic: class " + std::to_string(c) + " has " +
                          std::to_string(members.size()) + " instances, fewer than ipc=" +
                          std::to_string(ipc));
    }
    if (mode == SyntheticInit::class_mean && members.empty()) {
      throw ContractError("init_synthetic: class " + std::to_string(c) + " is empty");
    }
    if (mode == SyntheticInit::random_real) std::shuffle(members.begin(), members.end(), rng);
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(ds.dim());
    if (mode == SyntheticInit::class_mean) {
      for (Index i : members) mean += ds.X.row(i);
      mean /= static_cast<double>(members.size());
    }
    for (Index k = 0; k < ipc; ++k) {
      const Index row = c * ipc + k;
      s.y[static_cast<std::size_t>(row)] = c;
      switch (mode) {
        case SyntheticInit::random_real:
          s.X.row(row) = ds.X.row(members[static_cast<std::size_t>(k)]);
          break;
        case SyntheticInit::class_mean:
          s.X.row(row) = mean;
          break;
        case SyntheticInit::noise:
          for (Index j = 0; j < ds.dim(); ++j) s.X(row, j) = nd(rng);
          break;
      }
    }
  }
  if (jitter > 0.0) {
    for (Index i = 0; i < s.X.rows(); ++i) {
      for (Index j = 0; j < s.X.cols(); ++j) s.X(i, j) += jitter * nd(rng);
    }
  }
  return s;
}

}  // namespace iwd
