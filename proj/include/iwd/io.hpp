#pragma once

// Artifact persistence: model checkpoints, synthetic-set files, CSV tables
// and the run report. Numbers are written in shortest round-trip form so
// equal values always produce equal bytes.

#include "iwd/data.hpp"
#include "iwd/engine.hpp"
#include "iwd/influence.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace iwd::io {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

/// Shortest decimal text that parses back to exactly `x`.
std::string number(double x);

/// One JSON header line (arch, seed, dim) followed by the parameters as
/// little-endian float64.
void save_checkpoint(const ModelState& model, const fs::path& path);
ModelState load_checkpoint(const fs::path& path);

Json arch_to_json(const ArchDescriptor& arch);
ArchDescriptor arch_from_json(const Json& j);

/// `<stem>.json` holds the metadata and labels, `<stem>.bin` the features as
/// row-major little-endian float32.
void save_synthetic(const SyntheticSet& S, const fs::path& stem);
SyntheticSet load_synthetic(const fs::path& stem);

/// Header x0..x{d-1},label,weight.
void save_dataset_csv(const WeightedDataset& ds, const fs::path& path);
WeightedDataset load_dataset_csv(const fs::path& path, int class_count = 0);

/// Columns index,total,explicit,implicit,flipped_flag,solver_residual,solver_iters.
void save_influence_csv(const std::vector<InfluenceRecord>& records,
                        std::span<const Index> flipped, const fs::path& path);

void save_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path);
void save_tau_csv(const std::vector<TauPoint>& points, const fs::path& path);
/// Columns step,loss,lr.
void save_curve_csv(const RunReport& report, const fs::path& path);
/// Columns index,influence,loo.
void save_scatter_csv(std::span<const Index> indices, std::span<const double> influence,
                      std::span<const double> loo, const fs::path& path);

/// Everything in the report except wall-clock time.
Json report_to_json(const RunReport& report);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const fs::path& path, const Json& j);

}  // namespace iwd::io
