// Command-line front end: simulate / learn / evaluate / summarize.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "laacoex/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Wi-Fi/LTE-LAA coexistence simulator with Bayesian policy learning"};

  std::string mode;
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int iters = -1;
  int episodes = -1;
  int horizon = -1;
  int workers = -1;

  app.add_option("--mode", mode, "simulate | learn | evaluate | summarize")->required();
  app.add_option("--config", config_path, "experiment config file");
  app.add_option("--seed", seed, "master seed (overrides the config file)");
  app.add_option("--iters", iters, "max outer learning iterations");
  app.add_option("--episodes", episodes, "episodes per batch (K)");
  app.add_option("--horizon", horizon, "steps per episode (T)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--workers", workers, "episode-collection worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    laacoex::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = laacoex::load_config(config_path);
    if (seed >= 0) {
      cfg.seed = static_cast<std::uint64_t>(seed);
      cfg.seed_set = true;
    }
    if (iters >= 0) cfg.max_outer_iters = iters;
    if (episodes > 0) cfg.episodes = episodes;
    if (horizon > 0) cfg.horizon = horizon;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (workers > 0) cfg.workers = workers;

    if (mode == "simulate") {
      laacoex::run_simulate(cfg);
    } else if (mode == "learn") {
      const auto result = laacoex::run_learn(cfg);
      std::cout << "iterations: " << result.trace.size() << '\n';
      if (!result.trace.empty()) {
        const auto& last = result.trace.back();
        std::cout << "final ELBO: " << laacoex::fmt_double(last.elbo) << '\n';
        std::cout << "final node counts:";
        for (int z : last.node_counts) std::cout << ' ' << z;
        std::cout << '\n';
      }
    } else if (mode == "evaluate") {
      laacoex::run_evaluate(cfg, std::cout);
    } else if (mode == "summarize") {
      laacoex::summarize(cfg.out_dir, std::cout);
    } else {
      std::cerr << "unknown mode: " << mode << '\n';
      return 1;
    }
  } catch (const laacoex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const laacoex::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
