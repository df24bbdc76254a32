#pragma once

// Experiment configuration (one JSON document) and the subcommands of the
// command-line front-end. Parsing rejects unknown keys and out-of-range
// values with a ConfigError naming the dotted field path; nothing is
// computed before the whole document has been validated.

#include "iwd/engine.hpp"
#include "iwd/io.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace iwd {

inline constexpr int kConfigSchemaVersion = 1;

/// Where real data comes from. Generated sets take their seed from `seed`
/// when given, otherwise from the experiment seed.
struct DatasetSpec {
  std::string kind = "gaussian-mixture";  // gaussian-mixture | two-moons | csv | idx
  int classes = 2;
  Index per_class = 100;
  Index dim = 2;
  double spread = 0.5;
  Index n = 200;              // two-moons
  double noise = 0.1;         // two-moons
  std::filesystem::path path;    // csv
  std::filesystem::path images;  // idx
  std::filesystem::path labels;  // idx
  bool normalize = true;         // idx
  double flip_fraction = 0.0;
  std::optional<std::uint64_t> seed;
};

struct LooSpec {
  TrainerConfig trainer;       // arch defaults to the distillation arch
  std::size_t max_instances = 0;  // 0: every instance
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  DatasetSpec train;
  std::optional<DatasetSpec> test;
  DistillConfig distill;
  EvalConfig eval;
  std::optional<ScoreMode> influence_mode;  // default: implied by the inner set
  std::size_t histogram_bins = 30;
  std::optional<std::filesystem::path> synthetic;  // stem of a saved set
  std::vector<AblationMode> ablation_modes{AblationMode::random_select,
                                           AblationMode::influence_select,
                                           AblationMode::prune_then_distill, AblationMode::iwd};
  std::size_t seeds = 5;
  std::vector<double> tau_grid{0.01, 0.1, 1.0, 10.0, 100.0};
  LooSpec loo;

  /// Re-derives every component seed from `seed`.
  void set_seed(std::uint64_t seed);
};

/// Relative paths resolve against `base` (the config file's directory).
ExperimentConfig parse_config(const io::Json& doc, const std::filesystem::path& base = {});
/// Missing or unparsable files are ConfigErrors on the field "config".
ExperimentConfig load_config(const std::filesystem::path& path);

struct ExperimentData {
  WeightedDataset train;
  std::vector<Index> flipped;
  std::optional<WeightedDataset> test;
};

ExperimentData load_data(const ExperimentConfig& cfg);

enum class Command { distill, influence, evaluate, ablate, tau_sweep, loo_oracle };

std::string to_string(Command c);
Command command_from_string(const std::string& name);

/// Runs one subcommand and writes its artifacts into `out`. Numeric outputs
/// depend on the config only; timing.json carries the wall-clock time.
void run_command(Command c, const ExperimentConfig& cfg, const std::filesystem::path& out,
                 std::size_t threads);

}  // namespace iwd
