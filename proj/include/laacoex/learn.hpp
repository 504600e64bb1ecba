#pragma once

// Outer experiment loop: collect a batch with the epsilon-greedy behavior
// policies, run the inner CAVI loop to its stopping rule, prune, refresh the
// behavior policies from the new point estimates, and record the trace.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "laacoex/collect.hpp"
#include "laacoex/inference.hpp"

namespace laacoex {

struct LearnOptions {
  SimConfig sim;
  PriorHyperparams priors;
  int episodes = 200;  // K
  int horizon = 50;    // T
  int max_outer_iters = 50;
  int max_cavi_sweeps = 100;
  double elbo_tolerance = 1e-5;
  EpsilonSchedule epsilon;
  int node_cap = 10;
  double prune_threshold = 1e-3;
  std::vector<double> bin_edges = default_observation_bin_edges();
  std::uint64_t seed = 0;
  int workers = 1;
};

struct IterationRecord {
  int iteration = 0;
  double epsilon = 0.0;
  double elbo = 0.0;
  double value = 0.0;  // empirical discounted value under the new point estimate
  double jain = 0.0;   // Jain index of the batch-mean normalized throughputs
  int sweeps = 0;
  bool converged = false;
  std::vector<int> node_counts;  // per agent
  std::vector<double> g;         // per agent
  std::vector<double> h;         // per agent
};

using ElboTrace = std::vector<IterationRecord>;

struct LearnResult {
  std::vector<VariationalState> states;
  std::vector<FscPolicy> policies;  // normalized point estimates
  ElboTrace trace;
};

// Jain index of the per-agent mean normalized throughput across a batch.
inline double batch_jain_index(std::span<const Trajectory> episodes, double fair_share_mbps) {
  if (episodes.empty() || episodes[0].step_results.empty()) return 1.0;
  const int n = episodes[0].num_agents();
  std::vector<double> mean_x(static_cast<std::size_t>(n), 0.0);
  std::size_t steps = 0;
  for (const Trajectory& ep : episodes) {
    for (const auto& results : ep.step_results) {
      for (int i = 0; i < n; ++i) {
        const auto& r = results[static_cast<std::size_t>(i)];
        mean_x[static_cast<std::size_t>(i)] +=
            static_cast<double>(r.effective_payload_bits) /
            static_cast<double>(r.total_duration_us()) / fair_share_mbps;
      }
      ++steps;
    }
  }
  if (steps == 0) return 1.0;
  for (double& v : mean_x) v /= static_cast<double>(steps);
  const double x_last = mean_x.back();
  mean_x.pop_back();
  return jain_index(mean_x, x_last);
}

inline std::pair<double, double> batch_reward_range(std::span<const Trajectory> episodes) {
  double r_min = episodes[0].rewards[0];
  double r_max = r_min;
  for (const Trajectory& ep : episodes) {
    for (double r : ep.rewards) {
      r_min = std::min(r_min, r);
      r_max = std::max(r_max, r);
    }
  }
  return {r_min, r_max};
}

// Full learning run. `on_batch`, when set, receives every collected batch
// (outer iteration index first) so the caller can persist trajectories.
inline LearnResult learn(
    const LearnOptions& opt,
    const std::function<void(int, const std::vector<Trajectory>&)>& on_batch = nullptr) {
  opt.sim.validate();
  opt.priors.validate();
  validate_bin_edges(opt.bin_edges);
  const int num_agents = opt.sim.num_agents();
  const int num_actions = static_cast<int>(opt.sim.cw_set.size());
  const int num_obs = num_observation_bins(opt.bin_edges);

  LearnResult result;
  std::vector<BehaviorPolicy> behavior(static_cast<std::size_t>(num_agents));
  for (auto& b : behavior) b.base = uniform_fsc(num_actions, num_obs);

  for (int iter = 0; iter < opt.max_outer_iters; ++iter) {
    const double eps = epsilon_at(opt.epsilon, iter);
    for (auto& b : behavior) b.epsilon = eps;

    auto batch = collect_trajectories(opt.sim, behavior, opt.episodes, opt.horizon, opt.bin_edges,
                                      opt.seed, static_cast<std::uint64_t>(iter), opt.workers);
    if (on_batch) on_batch(iter, batch);

    if (iter == 0) {
      result.states.clear();
      result.states.reserve(static_cast<std::size_t>(num_agents));
      for (int n = 0; n < num_agents; ++n) {
        result.states.push_back(
            init_variational_state(batch, n, opt.node_cap, num_actions, num_obs, opt.priors));
      }
    }

    const auto [r_min, r_max] = batch_reward_range(batch);
    if (!(r_max > r_min)) {
      throw NumericalError("learn: degenerate reward batch (max == min)");
    }
    const CaviRun run = run_cavi(result.states, batch, opt.priors, opt.sim.gamma, r_min,
                                 opt.elbo_tolerance, opt.max_cavi_sweeps);
    for (auto& vs : result.states) prune_nodes(vs, opt.prune_threshold, opt.priors);

    std::vector<PointEstimatePolicy> points;
    points.reserve(static_cast<std::size_t>(num_agents));
    for (const auto& vs : result.states) points.push_back(point_estimate(vs));
    const double value = empirical_value(batch, points, opt.sim.gamma, r_min);

    IterationRecord rec;
    rec.iteration = iter;
    rec.epsilon = eps;
    rec.elbo = run.final_elbo;
    rec.value = value;
    rec.jain = batch_jain_index(batch, fair_share(opt.sim.rate_mbps, num_agents));
    rec.sweeps = run.sweeps;
    rec.converged = run.converged;
    for (const auto& vs : result.states) {
      rec.node_counts.push_back(vs.num_nodes);
      rec.g.push_back(vs.g);
      rec.h.push_back(vs.h);
    }
    result.trace.push_back(std::move(rec));

    result.policies.clear();
    for (const auto& p : points) result.policies.push_back(normalize_point_estimate(p));
    for (int n = 0; n < num_agents; ++n) {
      behavior[static_cast<std::size_t>(n)].base = result.policies[static_cast<std::size_t>(n)];
    }

    // The relative-change rule also closes the outer loop once consecutive
    // collection rounds agree; with exploration still mixing data this fires
    // only after the learned policies have settled.
    if (iter >= 1) {
      const double prev = result.trace[result.trace.size() - 2].elbo;
      const double rel = std::abs((run.final_elbo - prev) / (prev != 0.0 ? prev : 1.0));
      if (rel < opt.elbo_tolerance) break;
    }
  }
  return result;
}

}  // namespace laacoex
