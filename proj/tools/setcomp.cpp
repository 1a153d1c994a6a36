#include "setcomp/errors.hpp"
#include "setcomp/experiment.hpp"

#include <CLI/CLI.hpp>

#include <chrono>
#include <iostream>

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kConfigError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set-composition embedding experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
  for (const char* name : {"train", "eval", "render-preview", "report"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out, "overrides the config output directory");
    sub->add_flag("--quiet", quiet, "suppress progress messages");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kConfigError;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  setcomp::ExperimentConfig cfg;
  try {
    cfg = setcomp::load_experiment_config(config_path);
  } catch (const setcomp::ConfigError& e) {
    std::cerr << "setcomp " << command << ": config: " << e.what() << "\n";
    return kConfigError;
  }
  if (seed) cfg.seed = *seed;
  if (out) cfg.out = *out;

  const auto start = std::chrono::steady_clock::now();
  setcomp::ProgressSink progress;
  if (!quiet) {
    progress = [start](const std::string& msg) {
      const auto s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "[" << static_cast<long>(s) << "s] " << msg << std::endl;
    };
  }

  try {
    setcomp::DirectoryLock lock(cfg.out);
    setcomp::ExperimentRunner runner(cfg, progress);
    if (command == "train") {
      runner.train();
    } else if (command == "eval") {
      runner.eval();
    } else if (command == "render-preview") {
      runner.render_preview();
    } else {
      runner.report();
    }
  } catch (const setcomp::ConfigError& e) {
    std::cerr << "setcomp " << command << ": config: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "setcomp " << command << " failed: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return 0;
}
