#pragma once

// Episode records and their line-delimited persistence format. One line per
// step:
//
//   <episode> <step> <a_0..a_{N-1}> <o_0..o_{N-1}> <reward> <p_0..p_{N-1}>
//
// Actions, observations, and behavior probabilities are per agent.
// Observations are undefined at step 0 and written as -1. Reals carry 17
// significant digits so files round-trip bit-exactly.

#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "laacoex/errors.hpp"
#include "laacoex/sim.hpp"
#include "laacoex/text_io.hpp"

namespace laacoex {

struct Trajectory {
  // actions[t][n] for t = 0..T; observations[t-1][n] for t = 1..T;
  // rewards[t]; behavior_probs[t][n].
  std::vector<std::vector<int>> actions;
  std::vector<std::vector<int>> observations;
  std::vector<double> rewards;
  std::vector<std::vector<double>> behavior_probs;

  // Raw per-step simulator output, kept in memory for reward audits and
  // batch summaries; never serialized.
  std::vector<std::vector<ContentionResult>> step_results;

  int horizon() const { return static_cast<int>(actions.size()) - 1; }  // T
  int num_agents() const { return actions.empty() ? 0 : static_cast<int>(actions[0].size()); }

  bool operator==(const Trajectory& other) const {
    return actions == other.actions && observations == other.observations &&
           rewards == other.rewards && behavior_probs == other.behavior_probs;
  }
};

inline void write_trajectories(const std::string& path, std::span<const Trajectory> episodes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open trajectory file for writing: " + path);
  out << "# laacoex trajectories v1\n";
  out << "# episode step a[0..N-1] o[0..N-1] reward p[0..N-1]  (o = -1 at step 0)\n";
  for (std::size_t k = 0; k < episodes.size(); ++k) {
    const Trajectory& ep = episodes[k];
    const int n = ep.num_agents();
    for (int t = 0; t <= ep.horizon(); ++t) {
      out << k << ' ' << t;
      for (int i = 0; i < n; ++i) out << ' ' << ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
      for (int i = 0; i < n; ++i) {
        const int o = t == 0 ? -1 : ep.observations[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i)];
        out << ' ' << o;
      }
      out << ' ' << fmt_double(ep.rewards[static_cast<std::size_t>(t)]);
      for (int i = 0; i < n; ++i) {
        out << ' ' << fmt_double(ep.behavior_probs[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]);
      }
      out << '\n';
    }
  }
  if (!out) throw ConfigError("failed while writing trajectory file: " + path);
}

inline std::vector<Trajectory> read_trajectories(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open trajectory file: " + path);
  std::vector<Trajectory> episodes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto ctx = path + ":" + std::to_string(line_no);
    const auto tok = split_ws(line);
    if (tok.size() < 6 || (tok.size() - 3) % 3 != 0) {
      throw ConfigError(ctx + ": malformed trajectory record");
    }
    const int n = static_cast<int>((tok.size() - 3) / 3);
    const auto k = static_cast<std::size_t>(parse_int(tok[0], ctx));
    const int t = static_cast<int>(parse_int(tok[1], ctx));
    if (k > episodes.size()) throw ConfigError(ctx + ": episodes out of order");
    if (k == episodes.size()) episodes.emplace_back();
    Trajectory& ep = episodes[k];
    if (t != static_cast<int>(ep.actions.size())) throw ConfigError(ctx + ": steps out of order");
    std::vector<int> acts(static_cast<std::size_t>(n));
    std::vector<int> obs(static_cast<std::size_t>(n));
    std::vector<double> probs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) acts[static_cast<std::size_t>(i)] = static_cast<int>(parse_int(tok[static_cast<std::size_t>(2 + i)], ctx));
    for (int i = 0; i < n; ++i) obs[static_cast<std::size_t>(i)] = static_cast<int>(parse_int(tok[static_cast<std::size_t>(2 + n + i)], ctx));
    const double reward = parse_double(tok[static_cast<std::size_t>(2 + 2 * n)], ctx);
    for (int i = 0; i < n; ++i) {
      probs[static_cast<std::size_t>(i)] = parse_double(tok[static_cast<std::size_t>(3 + 2 * n + i)], ctx);
    }
    ep.actions.push_back(std::move(acts));
    if (t > 0) ep.observations.push_back(std::move(obs));
    ep.rewards.push_back(reward);
    ep.behavior_probs.push_back(std::move(probs));
  }
  return episodes;
}

}  // namespace laacoex
