#include "vdist/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kConfigError = 2;

int run_command(const std::string& path, std::optional<std::uint64_t> seed, std::optional<std::string> out,
                bool execute) {
  vdist::ExperimentConfig config;
  try {
    config = vdist::apply_overrides(vdist::load_experiment_config(path), seed, out);
  } catch (const vdist::ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  if (!execute) {
    std::cout << path << ": ok (" << vdist::kind_name(config.kind) << ", " << config.seeds.size() << " seeds)\n";
    return 0;
  }
  try {
    const vdist::ExperimentOutcome outcome = vdist::run_experiment(config);
    for (const auto& v : outcome.violations) std::cerr << "invariant violated: " << v << "\n";
    std::cout << "wrote " << outcome.output_dir.string() << "\n";
    return outcome.exit_code();
  } catch (const vdist::ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Value-distribution toolkit: EQR, Bellman operator, oracle and experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;

  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  auto* validate = app.add_subcommand("validate", "Parse and check a config file without running it");
  for (auto* sub : {run, validate}) {
    sub->add_option("config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--seed-override", seed_override, "Run this single seed instead of the configured list");
    sub->add_option("--out", out_override, "Output directory, replacing output_dir");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return run_command(config_path, seed_override, out_override, run->parsed());
}
