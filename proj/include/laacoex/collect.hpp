#pragma once

// Episode collection: every Dec-POMDP step is one synchronized contention
// epoch. Episode k draws its random stream from (master seed, stream salt, k),
// so batches are reproducible and episodes can run on any number of workers
// without changing the output.

#include <atomic>
#include <cstdint>
#include <span>
#include <thread>
#include <vector>

#include "laacoex/fsc.hpp"
#include "laacoex/observation.hpp"
#include "laacoex/reward.hpp"
#include "laacoex/rng.hpp"
#include "laacoex/sim.hpp"
#include "laacoex/trajectory.hpp"

namespace laacoex {

inline Trajectory collect_episode(const SimConfig& cfg, std::span<const BehaviorPolicy> policies,
                                  int horizon, std::span<const double> bin_edges, Rng& rng) {
  const auto kinds = cfg.roster();
  const int n = cfg.num_agents();
  if (static_cast<int>(policies.size()) != n) {
    throw ConfigError("collect_episode: one behavior policy per agent required");
  }

  Trajectory ep;
  RewardState reward_state(n, fair_share(cfg.rate_mbps, n));
  std::vector<int> nodes(static_cast<std::size_t>(n));
  std::vector<int> cw_choices(static_cast<std::size_t>(n));

  for (int t = 0; t <= horizon; ++t) {
    std::vector<int> actions(static_cast<std::size_t>(n));
    std::vector<double> probs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const SampledStep s =
          t == 0 ? policies[static_cast<std::size_t>(i)].sample_initial(rng)
                 : policies[static_cast<std::size_t>(i)].sample_step(
                       nodes[static_cast<std::size_t>(i)],
                       ep.actions.back()[static_cast<std::size_t>(i)],
                       ep.observations.back()[static_cast<std::size_t>(i)], rng);
      nodes[static_cast<std::size_t>(i)] = s.node;
      actions[static_cast<std::size_t>(i)] = s.action;
      probs[static_cast<std::size_t>(i)] = s.action_prob;
      cw_choices[static_cast<std::size_t>(i)] =
          cfg.cw_set[static_cast<std::size_t>(s.action)];
    }

    auto results = run_contention_epoch(cfg, kinds, cw_choices, rng);
    const double reward = apply_step(results, reward_state);

    if (t < horizon) {
      std::vector<int> obs(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        obs[static_cast<std::size_t>(i)] =
            bin_observation(results[static_cast<std::size_t>(i)].wait_duration_us, bin_edges);
      }
      ep.observations.push_back(std::move(obs));
    }
    ep.actions.push_back(std::move(actions));
    ep.behavior_probs.push_back(std::move(probs));
    ep.rewards.push_back(reward);
    ep.step_results.push_back(std::move(results));
  }
  return ep;
}

inline std::vector<Trajectory> collect_trajectories(const SimConfig& cfg,
                                                    std::span<const BehaviorPolicy> policies,
                                                    int num_episodes, int horizon,
                                                    std::span<const double> bin_edges,
                                                    std::uint64_t master_seed,
                                                    std::uint64_t stream_salt, int workers) {
  if (num_episodes < 1 || horizon < 1) {
    throw ConfigError("collect_trajectories: need K >= 1 and T >= 1");
  }
  validate_bin_edges(bin_edges);
  std::vector<Trajectory> episodes(static_cast<std::size_t>(num_episodes));
  auto run_one = [&](int k) {
    Rng rng = Rng::stream(master_seed, stream_salt, static_cast<std::uint64_t>(k));
    episodes[static_cast<std::size_t>(k)] = collect_episode(cfg, policies, horizon, bin_edges, rng);
  };
  if (workers <= 1) {
    for (int k = 0; k < num_episodes; ++k) run_one(k);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int thread_count = std::min(workers, num_episodes);
    pool.reserve(static_cast<std::size_t>(thread_count));
    for (int w = 0; w < thread_count; ++w) {
      pool.emplace_back([&] {
        for (int k = next.fetch_add(1); k < num_episodes; k = next.fetch_add(1)) run_one(k);
      });
    }
    for (auto& th : pool) th.join();
  }
  return episodes;
}

}  // namespace laacoex
