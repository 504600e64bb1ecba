#pragma once

// Fairness-weighted cumulative reward. Throughput is measured in bits per
// microsecond, which coincides with Mbps, so ln(|J*Th|+1) stays well scaled.

#include <cmath>
#include <span>
#include <vector>

#include "laacoex/errors.hpp"
#include "laacoex/sim.hpp"

namespace laacoex {

inline double fair_share(double rate_mbps, int total_users) {
  if (total_users < 1) throw ConfigError("fair_share: need at least one user");
  if (!(rate_mbps > 0)) throw ConfigError("fair_share: rate must be positive");
  return rate_mbps / total_users;
}

// Jain's index over agent n's fresh normalized throughput and the other
// agents' previous-step values. 1 at perfect fairness, 1/N at monopoly;
// an all-zero vector reads as fair.
inline double jain_index(std::span<const double> other_x, double x_n) {
  const int n = static_cast<int>(other_x.size()) + 1;
  double sum = x_n;
  double sum_sq = x_n * x_n;
  for (double x : other_x) {
    sum += x;
    sum_sq += x * x;
  }
  if (sum_sq == 0.0) return 1.0;
  return (sum * sum) / (n * sum_sq);
}

inline double global_reward(std::span<const double> local_rewards) {
  if (local_rewards.empty()) throw ConfigError("global_reward: empty reward list");
  double sum = 0.0;
  for (double r : local_rewards) sum += r;
  return sum;
}

// Per-agent running reward terms across one episode.
struct RewardState {
  std::vector<double> cumulative;  // r^n, nondecreasing
  std::vector<double> x;           // latest normalized throughput Th/O per agent
  double fair_share_mbps = 0.0;    // O, identical across agents here

  RewardState() = default;
  RewardState(int num_agents, double fair_share)
      : cumulative(static_cast<std::size_t>(num_agents), 0.0),
        x(static_cast<std::size_t>(num_agents), 0.0),
        fair_share_mbps(fair_share) {}
};

struct StepReward {
  double cumulative = 0.0;  // updated r^n
  double increment = 0.0;   // ln(|J*Th|+1)
  double throughput_mbps = 0.0;
  double x = 0.0;  // Th/O
  double jain = 0.0;
};

// Reward pieces for one agent's completed step, against the other agents'
// previous-step throughputs. Does not mutate the state; use apply_step to
// commit a full synchronized step.
inline StepReward step_reward(const ContentionResult& result, const RewardState& state,
                              int agent) {
  if (result.total_duration_us() <= 0) {
    throw NumericalError("step_reward: nonpositive step duration");
  }
  StepReward out;
  out.throughput_mbps = static_cast<double>(result.effective_payload_bits) /
                        static_cast<double>(result.total_duration_us());
  out.x = out.throughput_mbps / state.fair_share_mbps;
  std::vector<double> others;
  others.reserve(state.x.size() - 1);
  for (std::size_t i = 0; i < state.x.size(); ++i) {
    if (static_cast<int>(i) != agent) others.push_back(state.x[i]);
  }
  out.jain = jain_index(others, out.x);
  out.increment = std::log(std::abs(out.jain * out.throughput_mbps) + 1.0);
  out.cumulative = state.cumulative[static_cast<std::size_t>(agent)] + out.increment;
  return out;
}

// Commit one synchronized step for all agents and return the global reward
// (the sum of the updated cumulative local rewards).
inline double apply_step(const std::vector<ContentionResult>& results, RewardState& state) {
  const int n = static_cast<int>(results.size());
  std::vector<double> new_x(static_cast<std::size_t>(n));
  std::vector<double> new_cum(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const StepReward sr = step_reward(results[static_cast<std::size_t>(i)], state, i);
    new_x[static_cast<std::size_t>(i)] = sr.x;
    new_cum[static_cast<std::size_t>(i)] = sr.cumulative;
  }
  state.x = std::move(new_x);
  state.cumulative = std::move(new_cum);
  return global_reward(state.cumulative);
}

// Reward rescaled into [0,1] by the batch extremes.
inline double normalized_reward(double r, double r_min, double r_max) {
  if (!(r_max > r_min)) {
    throw NumericalError("normalized_reward: batch reward range is degenerate (max == min)");
  }
  return (r - r_min) / (r_max - r_min);
}

}  // namespace laacoex
