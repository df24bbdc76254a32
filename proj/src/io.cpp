#include "iwd/io.hpp"

#include "iwd/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace iwd::io {

namespace {

constexpr int kSchemaVersion = 1;

template <typename U>
void put_le(std::string& out, U bits) {
  for (std::size_t b = 0; b < sizeof(U); ++b) {
    out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
}

template <typename U>
U get_le(const std::string& in, std::size_t offset) {
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) {
    bits |= static_cast<U>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
  }
  return bits;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

Json parse_json(const std::string& text, const fs::path& path) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": byte " + std::to_string(e.byte) + ": invalid JSON");
  }
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const fs::path& path, std::size_t line) {
  double x = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw FormatError(path.string() + ": line " + std::to_string(line) + ": bad number '" + s +
                      "'");
  }
  return x;
}

}  // namespace

std::string number(double x) {
  std::array<char, 32> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf.data(), end);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f = open_out(path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json arch_to_json(const ArchDescriptor& arch) {
  Json j;
  j["kind"] = to_string(arch.kind);
  j["input_dim"] = arch.input_dim;
  j["hidden"] = arch.hidden;
  j["classes"] = arch.classes;
  if (arch.kind == ArchKind::tinyconv) {
    j["image_side"] = arch.image_side;
    j["conv_channels"] = arch.conv_channels;
  }
  return j;
}

ArchDescriptor arch_from_json(const Json& j) {
  ArchDescriptor a;
  a.kind = arch_kind_from_string(j.at("kind").get<std::string>());
  a.input_dim = j.at("input_dim").get<Index>();
  a.hidden = j.value("hidden", std::vector<Index>{});
  a.classes = j.at("classes").get<Index>();
  a.image_side = j.value("image_side", Index{0});
  a.conv_channels = j.value("conv_channels", Index{8});
  a.validate();
  return a;
}

// ---- checkpoints ----------------------------------------------------------------

void save_checkpoint(const ModelState& model, const fs::path& path) {
  Json h;
  h["schema_version"] = kSchemaVersion;
  h["arch"] = arch_to_json(model.arch);
  h["seed"] = model.seed;
  h["dim"] = model.theta.size();
  std::string out = h.dump() + "\n";
  for (Index i = 0; i < model.theta.size(); ++i) {
    put_le(out, std::bit_cast<std::uint64_t>(model.theta[i]));
  }
  write_text(path, out);
}

ModelState load_checkpoint(const fs::path& path) {
  const std::string raw = read_text(path);
  const std::size_t nl = raw.find('\n');
  if (nl == std::string::npos) throw FormatError(path.string() + ": byte 0: missing header line");
  const Json h = parse_json(raw.substr(0, nl), path);
  ModelState m;
  m.arch = arch_from_json(h.at("arch"));
  m.seed = h.at("seed").get<std::uint64_t>();
  const Index dim = h.at("dim").get<Index>();
  if (dim != param_count(m.arch)) {
    throw FormatError(path.string() + ": header dim does not match the architecture");
  }
  const std::size_t body = nl + 1;
  if (raw.size() != body + 8 * static_cast<std::size_t>(dim)) {
    throw FormatError(path.string() + ": byte " + std::to_string(raw.size()) +
                      ": parameter block has the wrong length");
  }
  m.theta.resize(dim);
  for (Index i = 0; i < dim; ++i) {
    m.theta[i] = std::bit_cast<double>(get_le<std::uint64_t>(raw, body + 8 * static_cast<std::size_t>(i)));
  }
  return m;
}

// ---- synthetic sets -------------------------------------------------------------

void save_synthetic(const SyntheticSet& S, const fs::path& stem) {
  S.validate();
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["rows"] = S.X.rows();
  j["dim"] = S.X.cols();
  j["ipc"] = S.ipc;
  j["class_count"] = S.class_count;
  j["lr"] = S.lr;
  j["dtype"] = "float32-le";
  j["layout"] = "row-major";
  j["labels"] = S.y;
  write_json(fs::path(stem).concat(".json"), j);

  std::string out;
  out.reserve(static_cast<std::size_t>(S.X.size()) * 4);
  for (Index r = 0; r < S.X.rows(); ++r) {
    for (Index c = 0; c < S.X.cols(); ++c) {
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(S.X(r, c))));
    }
  }
  write_text(fs::path(stem).concat(".bin"), out);
}

SyntheticSet load_synthetic(const fs::path& stem) {
  const fs::path meta = fs::path(stem).concat(".json");
  const fs::path bin = fs::path(stem).concat(".bin");
  const Json j = parse_json(read_text(meta), meta);
  SyntheticSet S;
  const Index rows = j.at("rows").get<Index>();
  const Index dim = j.at("dim").get<Index>();
  S.ipc = j.at("ipc").get<Index>();
  S.class_count = j.at("class_count").get<int>();
  S.lr = j.at("lr").get<double>();
  S.y = j.at("labels").get<Labels>();
  const std::string raw = read_text(bin);
  if (raw.size() != static_cast<std::size_t>(rows * dim) * 4) {
    throw FormatError(bin.string() + ": byte " + std::to_string(raw.size()) +
                      ": expected rows*dim float32 values");
  }
  S.X.resize(rows, dim);
  std::size_t at = 0;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < dim; ++c, at += 4) {
      S.X(r, c) = std::bit_cast<float>(get_le<std::uint32_t>(raw, at));
    }
  }
  S.validate();
  return S;
}

// ---- CSV --------------------------------------------------------------------------

void save_dataset_csv(const WeightedDataset& ds, const fs::path& path) {
  std::string out;
  for (Index c = 0; c < ds.dim(); ++c) out += "x" + std::to_string(c) + ",";
  out += "label,weight\n";
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index c = 0; c < ds.dim(); ++c) out += number(ds.X(i, c)) + ",";
    out += std::to_string(ds.y[static_cast<std::size_t>(i)]) + "," + number(ds.w[i]) + "\n";
  }
  write_text(path, out);
}

WeightedDataset load_dataset_csv(const fs::path& path, int class_count) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": line 1: empty file");
  const std::vector<std::string> header = split(line, ',');
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "weight") {
    throw FormatError(path.string() + ": line 1: header must end with label,weight");
  }
  const std::size_t dim = header.size() - 2;
  std::vector<std::vector<double>> rows;
  WeightedDataset ds;
  std::vector<double> weights;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ": line " + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " cells");
    }
    std::vector<double> x(dim);
    for (std::size_t c = 0; c < dim; ++c) x[c] = parse_number(cells[c], path, lineno);
    rows.push_back(std::move(x));
    ds.y.push_back(static_cast<int>(parse_number(cells[dim], path, lineno)));
    weights.push_back(parse_number(cells[dim + 1], path, lineno));
  }
  ds.X.resize(static_cast<Index>(rows.size()), static_cast<Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < dim; ++c) ds.X(static_cast<Index>(i), static_cast<Index>(c)) = rows[i][c];
  }
  ds.w = Eigen::Map<const Vector>(weights.data(), static_cast<Index>(weights.size()));
  const int max_label = ds.y.empty() ? 0 : *std::max_element(ds.y.begin(), ds.y.end());
  ds.class_count = class_count > 0 ? class_count : std::max(2, max_label + 1);
  ds.provenance = "csv:" + path.string();
  ds.validate();
  return ds;
}

void save_influence_csv(const std::vector<InfluenceRecord>& records,
                        std::span<const Index> flipped, const fs::path& path) {
  std::string out = "index,total,explicit,implicit,flipped_flag,solver_residual,solver_iters\n";
  for (const auto& r : records) {
    const bool f = std::binary_search(flipped.begin(), flipped.end(), r.index);
    out += std::to_string(r.index) + "," + number(r.total) + "," + number(r.explicit_term) + "," +
           number(r.implicit_term) + "," + (f ? "1" : "0") + "," + number(r.solver_residual) +
           "," + std::to_string(r.solver_iterations) + "\n";
  }
  write_text(path, out);
}

void save_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path) {
  std::string out = "mode,ipc,tau,seed,accuracy\n";
  for (const auto& r : rows) {
    out += to_string(r.mode) + "," + std::to_string(r.ipc) + "," + number(r.tau) + "," +
           std::to_string(r.seed) + "," + number(r.accuracy) + "\n";
  }
  write_text(path, out);
}

void save_tau_csv(const std::vector<TauPoint>& points, const fs::path& path) {
  std::string out = "tau,accuracy,accuracy_std\n";
  for (const auto& p : points) {
    out += number(p.tau) + "," + number(p.accuracy) + "," + number(p.accuracy_std) + "\n";
  }
  write_text(path, out);
}

void save_curve_csv(const RunReport& report, const fs::path& path) {
  std::string out = "step,loss,lr\n";
  for (std::size_t t = 0; t < report.losses.size(); ++t) {
    out += std::to_string(t) + "," + number(report.losses[t]) + "," + number(report.lrs[t]) + "\n";
  }
  write_text(path, out);
}

void save_scatter_csv(std::span<const Index> indices, std::span<const double> influence,
                      std::span<const double> loo, const fs::path& path) {
  if (influence.size() != indices.size() || loo.size() != indices.size()) {
    throw ContractError("save_scatter_csv: column lengths differ");
  }
  std::string out = "index,influence,loo\n";
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out += std::to_string(indices[k]) + "," + number(influence[k]) + "," + number(loo[k]) + "\n";
  }
  write_text(path, out);
}

Json report_to_json(const RunReport& report) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["outer_steps"] = report.losses.size();
  j["losses"] = report.losses;
  j["lrs"] = report.lrs;
  Json refreshes = Json::array();
  for (const auto& r : report.refreshes) {
    Json e;
    e["step"] = r.step;
    e["effective_size"] = r.effective_size;
    e["scores"] = std::vector<double>(r.scores.begin(), r.scores.end());
    e["weights"] = std::vector<double>(r.weights.begin(), r.weights.end());
    refreshes.push_back(std::move(e));
  }
  j["refreshes"] = std::move(refreshes);
  j["synthetic"] = {{"rows", report.synthetic.X.rows()},
                    {"dim", report.synthetic.X.cols()},
                    {"ipc", report.synthetic.ipc},
                    {"lr", report.synthetic.lr}};
  if (report.evaluated) {
    j["evaluation"] = {{"mean", report.eval_mean}, {"std", report.eval_std}};
  }
  return j;
}

}  // namespace iwd::io
