// Command-line front-end.
//
//   iwd <distill|influence|evaluate|ablate|tau-sweep|loo-oracle> --config PATH
//       [--out DIR] [--seed INT] [--threads INT]
//
// Exit codes: 0 success, 2 invalid configuration or usage, 1 runtime failure.

#include "iwd/errors.hpp"
#include "iwd/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <thread>

namespace {

std::size_t thread_count(std::optional<std::size_t> flag) {
  if (flag) return std::max<std::size_t>(1, *flag);
  if (const char* env = std::getenv("IWD_THREADS")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || v == 0) {
      throw iwd::ConfigError("IWD_THREADS", "expected a positive integer");
    }
    return static_cast<std::size_t>(v);
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Influence-weighted dataset distillation"};
  app.require_subcommand(1);
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;

  for (const char* name : {"distill", "influence", "evaluate", "ablate", "tau-sweep", "loo-oracle"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "experiment JSON")->required();
    sub->add_option("--out", out, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "experiment seed (overrides seed)");
    sub->add_option("--threads", threads, "worker threads (fallback: IWD_THREADS)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    iwd::ExperimentConfig cfg = iwd::load_config(config);
    if (seed) cfg.set_seed(*seed);
    const std::size_t n = thread_count(threads);
    const std::filesystem::path dir = out.empty() ? cfg.output_dir : std::filesystem::path(out);
    iwd::run_command(iwd::command_from_string(command), cfg, dir, n);
    std::cout << command << ": wrote " << dir.string() << "\n";
    return 0;
  } catch (const iwd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << command << " failed: " << e.what() << "\n";
    return 1;
  }
}
