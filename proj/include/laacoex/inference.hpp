#pragma once

// Batch E-step and coordinate updates: trajectory reweighting, aggregated
// forward-backward sufficient statistics, the closed-form parameter updates,
// the ELBO surrogate, pruning, and the inner convergence loop.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "laacoex/errors.hpp"
#include "laacoex/trajectory.hpp"
#include "laacoex/variational.hpp"

namespace laacoex {

namespace detail {

// Stable ln(sum of exp(terms)) over possibly empty input.
inline double log_sum_exp(std::span<const double> terms) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : terms) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double sum = 0.0;
  for (double v : terms) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

}  // namespace detail

// Forward likelihood state for a whole batch against one set of point
// estimates: per-agent forward messages and prefix sums of the stored
// behavior log-probabilities.
struct BatchLikelihoods {
  std::vector<std::vector<ForwardMessages>> forward;    // [K][N]
  std::vector<std::vector<double>> behavior_log_prefix;  // [K][T+1], summed over agents
};

inline BatchLikelihoods compute_batch_likelihoods(std::span<const Trajectory> trajectories,
                                                  std::span<const PointEstimatePolicy> points) {
  BatchLikelihoods bl;
  const int num_agents = static_cast<int>(points.size());
  bl.forward.resize(trajectories.size());
  bl.behavior_log_prefix.resize(trajectories.size());
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Trajectory& ep = trajectories[k];
    if (ep.num_agents() != num_agents) {
      throw ConfigError("batch likelihoods: trajectory agent count mismatch");
    }
    const int t_max = ep.horizon();
    std::vector<int> actions(static_cast<std::size_t>(t_max) + 1);
    std::vector<int> observations(static_cast<std::size_t>(t_max));
    bl.forward[k].reserve(static_cast<std::size_t>(num_agents));
    for (int n = 0; n < num_agents; ++n) {
      for (int t = 0; t <= t_max; ++t) {
        actions[static_cast<std::size_t>(t)] = ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(n)];
      }
      for (int t = 1; t <= t_max; ++t) {
        observations[static_cast<std::size_t>(t - 1)] =
            ep.observations[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(n)];
      }
      bl.forward[k].push_back(forward_messages(points[static_cast<std::size_t>(n)], actions, observations));
    }
    auto& prefix = bl.behavior_log_prefix[k];
    prefix.resize(static_cast<std::size_t>(t_max) + 1);
    double acc = 0.0;
    for (int t = 0; t <= t_max; ++t) {
      for (int n = 0; n < num_agents; ++n) {
        const double p = ep.behavior_probs[static_cast<std::size_t>(t)][static_cast<std::size_t>(n)];
        if (!(p > 0.0)) throw ConfigError("batch likelihoods: stored behavior probability not positive");
        acc += std::log(p);
      }
      prefix[static_cast<std::size_t>(t)] = acc;
    }
  }
  return bl;
}

// Reweighting scalars nu_t^k. Weights are stored divided by K, so they sum
// to one over the batch by construction.
struct NuWeights {
  std::vector<std::vector<double>> w;  // [K][T+1], w = nu / K
  double log_vhat = 0.0;               // ln of the empirical value under the point estimate
};

inline NuWeights nu_weights(const BatchLikelihoods& bl, std::span<const Trajectory> trajectories,
                            double gamma, double r_min) {
  // gamma = 0 is legal (only t = 0 carries weight); keep 0 * log(0) out.
  auto discount_log = [log_gamma = std::log(gamma)](int t) {
    return t == 0 ? 0.0 : t * log_gamma;
  };
  std::vector<double> log_terms;
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Trajectory& ep = trajectories[k];
    for (int t = 0; t <= ep.horizon(); ++t) {
      const double shifted = ep.rewards[static_cast<std::size_t>(t)] - r_min;
      if (shifted < 0.0) {
        throw NumericalError("nu_weights: reward below the stated floor R_min");
      }
      if (shifted == 0.0) continue;
      double log_num = 0.0;
      for (const auto& fm : bl.forward[k]) log_num += fm.log_prefix[static_cast<std::size_t>(t)];
      log_terms.push_back(discount_log(t) + std::log(shifted) + log_num -
                          bl.behavior_log_prefix[k][static_cast<std::size_t>(t)]);
    }
  }
  NuWeights nu;
  if (log_terms.empty()) {
    throw NumericalError("nu_weights: empirical value is zero (all rewards at the floor)");
  }
  nu.log_vhat = detail::log_sum_exp(log_terms) -
                std::log(static_cast<double>(trajectories.size()));
  nu.w.resize(trajectories.size());
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Trajectory& ep = trajectories[k];
    auto& row = nu.w[k];
    row.assign(static_cast<std::size_t>(ep.horizon()) + 1, 0.0);
    for (int t = 0; t <= ep.horizon(); ++t) {
      const double shifted = ep.rewards[static_cast<std::size_t>(t)] - r_min;
      if (shifted == 0.0) continue;
      double log_num = 0.0;
      for (const auto& fm : bl.forward[k]) log_num += fm.log_prefix[static_cast<std::size_t>(t)];
      const double log_term = discount_log(t) + std::log(shifted) + log_num -
                              bl.behavior_log_prefix[k][static_cast<std::size_t>(t)];
      row[static_cast<std::size_t>(t)] =
          std::exp(log_term - nu.log_vhat) / static_cast<double>(trajectories.size());
    }
  }
  return nu;
}

inline NuWeights nu_weights(std::span<const PointEstimatePolicy> points,
                            std::span<const Trajectory> trajectories, double gamma,
                            double r_min) {
  return nu_weights(compute_batch_likelihoods(trajectories, points), trajectories, gamma, r_min);
}

// Off-policy empirical value of a policy (point estimate or proper FSC via
// as_point_estimate) from behavior trajectories. Terms are combined through
// a signed log-sum so wide dynamic ranges stay accurate.
inline double empirical_value(std::span<const Trajectory> trajectories,
                              std::span<const PointEstimatePolicy> points, double gamma,
                              double r_min) {
  const auto bl = compute_batch_likelihoods(trajectories, points);
  auto discount_log = [log_gamma = std::log(gamma)](int t) {
    return t == 0 ? 0.0 : t * log_gamma;
  };
  std::vector<double> log_mag;
  std::vector<int> sign;
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Trajectory& ep = trajectories[k];
    for (int t = 0; t <= ep.horizon(); ++t) {
      const double shifted = ep.rewards[static_cast<std::size_t>(t)] - r_min;
      if (shifted == 0.0) continue;
      double log_num = 0.0;
      for (const auto& fm : bl.forward[k]) log_num += fm.log_prefix[static_cast<std::size_t>(t)];
      log_mag.push_back(discount_log(t) + std::log(std::abs(shifted)) + log_num -
                        bl.behavior_log_prefix[k][static_cast<std::size_t>(t)]);
      sign.push_back(shifted > 0.0 ? 1 : -1);
    }
  }
  if (log_mag.empty()) return 0.0;
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : log_mag) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < log_mag.size(); ++i) {
    sum += sign[i] * std::exp(log_mag[i] - mx);
  }
  return sum * std::exp(mx) / static_cast<double>(trajectories.size());
}

// Sufficient statistics of the reweighted q(z) for one agent, aggregated
// over every (episode, endpoint, step) triple:
//   m0[i]          = sum w * q(z_0 = i)
//   ma[i][a]       = sum w * sum_tau q(z_tau = i) I(a_tau = a)
//   mt[a][o][i][j] = sum w * sum_tau q(z_{tau-1}=i, z_tau=j) I(a_{tau-1}=a, o_tau=o)
// plus the scalars needed to evaluate the ELBO with q(z) frozen.
struct AgentStats {
  std::vector<double> m0;  // [Z]
  std::vector<double> ma;  // [Z*A]
  std::vector<double> mt;  // [A*O*Z*Z]
  double w_log_lik = 0.0;  // sum w * ln p(a_{0:t}|o_{1:t}, point)
};

struct EStepStats {
  std::vector<AgentStats> agents;
  double w_log_rtilde = 0.0;  // sum w * ln(gamma^t (r - R_min) / prod behavior)
  double w_log_nu = 0.0;      // sum w * ln nu
  double sum_w = 0.0;
  double log_vhat = 0.0;
  // Log point-estimate tables the marginals were computed against; needed by
  // the E[ln q(z)] term of the ELBO.
  std::vector<PointEstimatePolicy> points;
};

// Aggregated E-step over one episode for one agent. A single backward pass
// folds every endpoint t at once: with scaled forward rows alpha_hat and step
// scales c_tau, the vector G_tau = sum_{t>=tau} (w_t / l_t) beta_tau^t e^{C_tau}
// obeys G_tau = w_tau * 1 + M_{tau+1} G_{tau+1} / c_{tau+1}, and
// alpha_hat_tau(i) G_tau(i) equals sum_t w_t q^t(z_tau = i).
inline void accumulate_agent_episode(const PointEstimatePolicy& p, const ForwardMessages& fm,
                                     std::span<const int> actions, std::span<const int> observations,
                                     std::span<const double> w, AgentStats& st) {
  const int z_count = p.num_nodes;
  const auto zs = static_cast<std::size_t>(z_count);
  const int t_max = static_cast<int>(actions.size()) - 1;
  std::vector<double> g_vec(zs, w[static_cast<std::size_t>(t_max)]);
  std::vector<double> g_prev(zs);
  for (int tau = t_max; tau >= 0; --tau) {
    const auto arow = fm.row(tau);
    const int a_tau = actions[static_cast<std::size_t>(tau)];
    for (int i = 0; i < z_count; ++i) {
      const double s = arow[static_cast<std::size_t>(i)] * g_vec[static_cast<std::size_t>(i)];
      if (tau == 0) st.m0[static_cast<std::size_t>(i)] += s;
      st.ma[static_cast<std::size_t>(i) * static_cast<std::size_t>(p.num_actions) +
            static_cast<std::size_t>(a_tau)] += s;
    }
    if (tau == 0) break;
    const int a_prev = actions[static_cast<std::size_t>(tau - 1)];
    const int obs = observations[static_cast<std::size_t>(tau - 1)];
    const auto kernel = detail::step_kernel(p, a_prev, obs, a_tau);
    const double inv_c = std::exp(-fm.log_step[static_cast<std::size_t>(tau)]);
    const auto aprev = fm.row(tau - 1);
    double* mt_block = st.mt.data() +
                       (static_cast<std::size_t>(a_prev) * static_cast<std::size_t>(p.num_obs) +
                        static_cast<std::size_t>(obs)) *
                           zs * zs;
    for (int i = 0; i < z_count; ++i) {
      double acc = 0.0;
      const double ai = aprev[static_cast<std::size_t>(i)];
      for (int j = 0; j < z_count; ++j) {
        const double kij = kernel(i, j);
        const double flow = kij * g_vec[static_cast<std::size_t>(j)] * inv_c;
        mt_block[static_cast<std::size_t>(i) * zs + static_cast<std::size_t>(j)] += ai * flow;
        acc += flow;
      }
      g_prev[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(tau - 1)] + acc;
      if (!std::isfinite(g_prev[static_cast<std::size_t>(i)])) {
        throw NumericalError("E-step: backward aggregation overflow");
      }
    }
    g_vec.swap(g_prev);
  }
  for (int t = 0; t <= t_max; ++t) {
    st.w_log_lik += w[static_cast<std::size_t>(t)] * fm.log_prefix[static_cast<std::size_t>(t)];
  }
}

inline EStepStats accumulate_estep(std::span<const Trajectory> trajectories,
                                   std::span<const PointEstimatePolicy> points, double gamma,
                                   double r_min) {
  const auto bl = compute_batch_likelihoods(trajectories, points);
  const auto nu = nu_weights(bl, trajectories, gamma, r_min);
  const int num_agents = static_cast<int>(points.size());

  EStepStats stats;
  stats.log_vhat = nu.log_vhat;
  stats.points.assign(points.begin(), points.end());
  stats.agents.resize(static_cast<std::size_t>(num_agents));
  for (int n = 0; n < num_agents; ++n) {
    const auto& p = points[static_cast<std::size_t>(n)];
    auto& st = stats.agents[static_cast<std::size_t>(n)];
    st.m0.assign(static_cast<std::size_t>(p.num_nodes), 0.0);
    st.ma.assign(static_cast<std::size_t>(p.num_nodes) * static_cast<std::size_t>(p.num_actions), 0.0);
    st.mt.assign(static_cast<std::size_t>(p.num_actions) * static_cast<std::size_t>(p.num_obs) *
                     static_cast<std::size_t>(p.num_nodes) * static_cast<std::size_t>(p.num_nodes),
                 0.0);
  }

  auto discount_log = [log_gamma = std::log(gamma)](int t) {
    return t == 0 ? 0.0 : t * log_gamma;
  };
  std::vector<int> actions;
  std::vector<int> observations;
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Trajectory& ep = trajectories[k];
    const int t_max = ep.horizon();
    const auto& w = nu.w[k];
    for (int t = 0; t <= t_max; ++t) {
      const double wt = w[static_cast<std::size_t>(t)];
      if (wt == 0.0) continue;
      stats.sum_w += wt;
      const double shifted = ep.rewards[static_cast<std::size_t>(t)] - r_min;
      const double log_rtilde = discount_log(t) + std::log(shifted) -
                                bl.behavior_log_prefix[k][static_cast<std::size_t>(t)];
      stats.w_log_rtilde += wt * log_rtilde;
      stats.w_log_nu += wt * std::log(wt * static_cast<double>(trajectories.size()));
    }
    for (int n = 0; n < num_agents; ++n) {
      actions.resize(static_cast<std::size_t>(t_max) + 1);
      observations.resize(static_cast<std::size_t>(t_max));
      for (int t = 0; t <= t_max; ++t) {
        actions[static_cast<std::size_t>(t)] = ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(n)];
      }
      for (int t = 1; t <= t_max; ++t) {
        observations[static_cast<std::size_t>(t - 1)] =
            ep.observations[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(n)];
      }
      accumulate_agent_episode(points[static_cast<std::size_t>(n)], bl.forward[k][static_cast<std::size_t>(n)],
                               actions, observations, w, stats.agents[static_cast<std::size_t>(n)]);
    }
  }
  return stats;
}

// The closed-form coordinate updates, one factor family per function so the
// ascent property can be checked between them. Each is the exact maximizer
// of the ELBO surrogate in its factor with everything else held fixed.
namespace coord {

// q(u_i) <- Beta(1 + m0_i, E[rho] + tail of m0); E[rho] from the current (g,h).
// The final truncation index carries the leftover stick product, so its Beta
// factor never touches data and its exact update is the conditional prior
// Beta(1, E[rho]).
inline void update_delta_mu(VariationalState& vs, const AgentStats& st) {
  const int z_count = vs.num_nodes;
  const double e_rho = vs.g / vs.h;
  for (int i = 0; i < z_count; ++i) {
    if (i == z_count - 1) {
      vs.delta[static_cast<std::size_t>(i)] = 1.0;
      vs.mu[static_cast<std::size_t>(i)] = e_rho;
      break;
    }
    vs.delta[static_cast<std::size_t>(i)] = 1.0 + st.m0[static_cast<std::size_t>(i)];
    double tail = 0.0;
    for (int m = i + 1; m < z_count; ++m) tail += st.m0[static_cast<std::size_t>(m)];
    vs.mu[static_cast<std::size_t>(i)] = e_rho + tail;
  }
}

inline void update_phi(VariationalState& vs, const AgentStats& st, const PriorHyperparams& priors) {
  for (int i = 0; i < vs.num_nodes; ++i) {
    for (int a = 0; a < vs.num_actions; ++a) {
      vs.phi[vs.phi_index(i, a)] =
          priors.theta + st.ma[static_cast<std::size_t>(i) * static_cast<std::size_t>(vs.num_actions) +
                               static_cast<std::size_t>(a)];
    }
  }
}

// Same leftover treatment on the destination index of each transition row.
inline void update_sigma_lambda(VariationalState& vs, const AgentStats& st) {
  const int z_count = vs.num_nodes;
  for (int a = 0; a < vs.num_actions; ++a) {
    for (int o = 0; o < vs.num_obs; ++o) {
      for (int i = 0; i < z_count; ++i) {
        const std::size_t row = vs.stick_row(a, o, i);
        const double e_alpha = vs.a_shape[vs.stick_index(a, o, i)] / vs.b_rate[vs.stick_index(a, o, i)];
        for (int j = 0; j < z_count; ++j) {
          if (j == z_count - 1) {
            vs.sigma[row + static_cast<std::size_t>(j)] = 1.0;
            vs.lambda[row + static_cast<std::size_t>(j)] = e_alpha;
            break;
          }
          vs.sigma[row + static_cast<std::size_t>(j)] = 1.0 + st.mt[row + static_cast<std::size_t>(j)];
          double tail = 0.0;
          for (int m = j + 1; m < z_count; ++m) tail += st.mt[row + static_cast<std::size_t>(m)];
          vs.lambda[row + static_cast<std::size_t>(j)] = e_alpha + tail;
        }
      }
    }
  }
}

inline void update_g_h(VariationalState& vs, const PriorHyperparams& priors) {
  vs.g = priors.e + vs.num_nodes;
  double h_sum = 0.0;
  for (int i = 0; i < vs.num_nodes; ++i) {
    h_sum += digamma(vs.mu[static_cast<std::size_t>(i)]) -
             digamma(vs.delta[static_cast<std::size_t>(i)] + vs.mu[static_cast<std::size_t>(i)]);
  }
  vs.h = priors.f - h_sum;
}

inline void update_a_b(VariationalState& vs, const PriorHyperparams& priors) {
  for (int a = 0; a < vs.num_actions; ++a) {
    for (int o = 0; o < vs.num_obs; ++o) {
      for (int i = 0; i < vs.num_nodes; ++i) {
        const std::size_t row = vs.stick_row(a, o, i);
        vs.a_shape[vs.stick_index(a, o, i)] = priors.c + vs.num_nodes;
        double b_sum = 0.0;
        for (int j = 0; j < vs.num_nodes; ++j) {
          b_sum += digamma(vs.lambda[row + static_cast<std::size_t>(j)]) -
                   digamma(vs.sigma[row + static_cast<std::size_t>(j)] +
                           vs.lambda[row + static_cast<std::size_t>(j)]);
        }
        vs.b_rate[vs.stick_index(a, o, i)] = priors.d - b_sum;
      }
    }
  }
}

}  // namespace coord

namespace detail {

// The stick parameters and their Gamma concentration chase each other
// through the posterior mean: mu_i = x + T_i with x = E[concentration], and
// x = shape_total / (rate0 - sum_i [psi(x+T_i) - psi(first_i+x+T_i)]).
// Alternating single passes contract with ratio Z/(Z+shape0), which is
// hopeless near 1; this solves the scalar fixed point directly. Rows without
// data mass reduce to x = shape0/rate0 in closed form.
inline double solve_concentration_mean(double shape_total, double rate0,
                                       std::span<const double> first,
                                       std::span<const double> tails) {
  bool empty = true;
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (first[i] != 1.0 || tails[i] != 0.0) {
      empty = false;
      break;
    }
  }
  const double z_count = static_cast<double>(first.size());
  if (empty) return (shape_total - z_count) / rate0;

  auto rate_at = [&](double x) {
    double s = 0.0;
    for (std::size_t i = 0; i < first.size(); ++i) {
      s += digamma(x + tails[i]) - digamma(first[i] + x + tails[i]);
    }
    return rate0 - s;  // always >= rate0 since each summand is negative
  };
  // residual(x) = shape_total / rate_at(x) - x; positive near 0, negative at
  // x = shape_total/rate0, with a single crossing in between.
  double lo = 1e-14;
  double hi = shape_total / rate0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (shape_total / rate_at(mid) > mid) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-15 * hi) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// All parameter updates for one agent against frozen statistics. The
// delta/phi/sigma updates are the single-pass formulas verbatim; each coupled
// (mu, h) and (lambda, b) block is taken to the joint fixed point its
// equations define.
inline void apply_parameter_updates(VariationalState& vs, const AgentStats& st,
                                    const PriorHyperparams& priors) {
  const int z_count = vs.num_nodes;
  const auto zs = static_cast<std::size_t>(z_count);

  coord::update_phi(vs, st, priors);

  // q(u) and q(rho).
  std::vector<double> tails(zs, 0.0);
  for (int i = 0; i < z_count; ++i) {
    vs.delta[static_cast<std::size_t>(i)] =
        i == z_count - 1 ? 1.0 : 1.0 + st.m0[static_cast<std::size_t>(i)];
    double tail = 0.0;
    if (i < z_count - 1) {
      for (int m = i + 1; m < z_count; ++m) tail += st.m0[static_cast<std::size_t>(m)];
    }
    tails[static_cast<std::size_t>(i)] = tail;
  }
  const double e_rho =
      detail::solve_concentration_mean(priors.e + z_count, priors.f, vs.delta, tails);
  for (int i = 0; i < z_count; ++i) {
    vs.mu[static_cast<std::size_t>(i)] = e_rho + tails[static_cast<std::size_t>(i)];
  }
  vs.g = priors.e + z_count;
  vs.h = vs.g / e_rho;

  // q(V) and q(alpha), row by row.
  for (int a = 0; a < vs.num_actions; ++a) {
    for (int o = 0; o < vs.num_obs; ++o) {
      for (int i = 0; i < z_count; ++i) {
        const std::size_t row = vs.stick_row(a, o, i);
        for (int j = 0; j < z_count; ++j) {
          vs.sigma[row + static_cast<std::size_t>(j)] =
              j == z_count - 1 ? 1.0 : 1.0 + st.mt[row + static_cast<std::size_t>(j)];
          double tail = 0.0;
          if (j < z_count - 1) {
            for (int m = j + 1; m < z_count; ++m) tail += st.mt[row + static_cast<std::size_t>(m)];
          }
          tails[static_cast<std::size_t>(j)] = tail;
        }
        const double e_alpha = detail::solve_concentration_mean(
            priors.c + z_count, priors.d, {vs.sigma.data() + row, zs}, {tails.data(), zs});
        for (int j = 0; j < z_count; ++j) {
          vs.lambda[row + static_cast<std::size_t>(j)] = e_alpha + tails[static_cast<std::size_t>(j)];
        }
        vs.a_shape[vs.stick_index(a, o, i)] = priors.c + z_count;
        vs.b_rate[vs.stick_index(a, o, i)] = (priors.c + z_count) / e_alpha;
      }
    }
  }

  vs.occupancy.assign(static_cast<std::size_t>(z_count), 0.0);
  vs.occupancy_total = 0.0;
  for (int i = 0; i < z_count; ++i) {
    double occ = 0.0;
    for (int a = 0; a < vs.num_actions; ++a) {
      occ += st.ma[static_cast<std::size_t>(i) * static_cast<std::size_t>(vs.num_actions) +
                   static_cast<std::size_t>(a)];
    }
    vs.occupancy[static_cast<std::size_t>(i)] = occ;
    vs.occupancy_total += occ;
  }
  vs.check_positive();
}

// The ELBO surrogate, split into its named pieces. Everything q(z)-side is
// frozen inside `stats`, so this is a closed-form function of the current
// Beta/Gamma/Dirichlet parameters; the coordinate updates ascend it.
struct ElboBreakdown {
  double reward_likelihood = 0.0;  // E_q[ln r~ p(a,z|o,Theta)]
  double cross_u = 0.0;            // E[ln p(u|rho)] - E[ln q(u)]
  double cross_v = 0.0;            // E[ln p(V|alpha)] - E[ln q(V)]
  double cross_pi = 0.0;           // E[ln p(pi)] - E[ln q(pi)]
  double cross_rho = 0.0;          // E[ln p(rho)] - E[ln q(rho)]
  double cross_alpha = 0.0;        // E[ln p(alpha)] - E[ln q(alpha)]
  double z_entropy = 0.0;          // -E[ln q(z)]

  double total() const {
    return reward_likelihood + cross_u + cross_v + cross_pi + cross_rho + cross_alpha + z_entropy;
  }
};

namespace detail {

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Sum of stat[k] * logs[k], skipping zero-weight entries so that unreachable
// cells with -inf logs contribute nothing.
inline double weighted_log_dot(std::span<const double> stat, std::span<const double> logs) {
  double sum = 0.0;
  for (std::size_t i = 0; i < stat.size(); ++i) {
    if (stat[i] != 0.0) sum += stat[i] * logs[i];
  }
  return sum;
}

// E[ln p(beta-stick | concentration)] - E[ln q(beta-stick)] for one Beta
// factor with prior Beta(1, conc), conc ~ Gamma handled by its expectations.
inline double beta_stick_cross(double first, double second, double e_log_conc, double e_conc) {
  const double dab = digamma(first + second);
  const double e_log_u = digamma(first) - dab;
  const double e_log_1mu = digamma(second) - dab;
  const double e_log_p = e_log_conc + (e_conc - 1.0) * e_log_1mu;
  const double e_log_q =
      (first - 1.0) * e_log_u + (second - 1.0) * e_log_1mu - log_beta(first, second);
  return e_log_p - e_log_q;
}

// E[ln p(x)] - E[ln q(x)] for Gamma prior (shape0, rate0) and Gamma
// posterior (shape, rate).
inline double gamma_cross(double shape0, double rate0, double shape, double rate) {
  const double e_log_x = digamma(shape) - std::log(rate);
  const double e_x = shape / rate;
  const double e_log_p = shape0 * std::log(rate0) - std::lgamma(shape0) +
                         (shape0 - 1.0) * e_log_x - rate0 * e_x;
  const double e_log_q =
      shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * e_log_x - rate * e_x;
  return e_log_p - e_log_q;
}

}  // namespace detail

inline ElboBreakdown elbo_given_stats(std::span<const VariationalState> states,
                                      const EStepStats& stats, const PriorHyperparams& priors) {
  ElboBreakdown out;
  out.reward_likelihood = stats.w_log_rtilde;
  out.z_entropy = -stats.w_log_nu;

  for (std::size_t n = 0; n < states.size(); ++n) {
    const VariationalState& vs = states[n];
    const AgentStats& st = stats.agents[n];
    const PointEstimatePolicy cur = point_estimate(vs);

    // Reweighted complete-data log-likelihood is linear in the statistics.
    out.reward_likelihood += detail::weighted_log_dot(st.m0, cur.log_eta) +
                             detail::weighted_log_dot(st.ma, cur.log_pi) +
                             detail::weighted_log_dot(st.mt, cur.log_omega);

    // -E[ln q(z)] continued: the path factor against the tables the
    // marginals were built from, minus the per-endpoint normalizers.
    const PointEstimatePolicy& old = stats.points[n];
    out.z_entropy -= detail::weighted_log_dot(st.m0, old.log_eta) +
                     detail::weighted_log_dot(st.ma, old.log_pi) +
                     detail::weighted_log_dot(st.mt, old.log_omega) - st.w_log_lik;

    const double e_log_rho = digamma(vs.g) - std::log(vs.h);
    const double e_rho = vs.g / vs.h;
    for (int i = 0; i < vs.num_nodes; ++i) {
      out.cross_u += detail::beta_stick_cross(vs.delta[static_cast<std::size_t>(i)],
                                              vs.mu[static_cast<std::size_t>(i)], e_log_rho, e_rho);
    }
    out.cross_rho += detail::gamma_cross(priors.e, priors.f, vs.g, vs.h);

    const double sum_theta = priors.theta * vs.num_actions;
    const double dirichlet_prior_norm =
        std::lgamma(sum_theta) - vs.num_actions * std::lgamma(priors.theta);
    for (int i = 0; i < vs.num_nodes; ++i) {
      double phi_sum = 0.0;
      for (int a = 0; a < vs.num_actions; ++a) phi_sum += vs.phi[vs.phi_index(i, a)];
      const double d_phi_sum = digamma(phi_sum);
      double e_log_p = dirichlet_prior_norm;
      double e_log_q = std::lgamma(phi_sum);
      for (int a = 0; a < vs.num_actions; ++a) {
        const double phi = vs.phi[vs.phi_index(i, a)];
        const double e_log_pi = digamma(phi) - d_phi_sum;
        e_log_p += (priors.theta - 1.0) * e_log_pi;
        e_log_q += (phi - 1.0) * e_log_pi - std::lgamma(phi);
      }
      out.cross_pi += e_log_p - e_log_q;
    }

    for (int a = 0; a < vs.num_actions; ++a) {
      for (int o = 0; o < vs.num_obs; ++o) {
        for (int i = 0; i < vs.num_nodes; ++i) {
          const std::size_t idx = vs.stick_index(a, o, i);
          const double e_log_alpha = digamma(vs.a_shape[idx]) - std::log(vs.b_rate[idx]);
          const double e_alpha = vs.a_shape[idx] / vs.b_rate[idx];
          const std::size_t row = vs.stick_row(a, o, i);
          for (int j = 0; j < vs.num_nodes; ++j) {
            out.cross_v += detail::beta_stick_cross(vs.sigma[row + static_cast<std::size_t>(j)],
                                                    vs.lambda[row + static_cast<std::size_t>(j)],
                                                    e_log_alpha, e_alpha);
          }
          out.cross_alpha += detail::gamma_cross(priors.c, priors.d, vs.a_shape[idx], vs.b_rate[idx]);
        }
      }
    }
  }
  return out;
}

// ELBO surrogate for the current states against a fresh E-step on the batch.
inline ElboBreakdown elbo(std::span<const VariationalState> states,
                          std::span<const Trajectory> trajectories,
                          const PriorHyperparams& priors, double gamma, double r_min) {
  std::vector<PointEstimatePolicy> points;
  points.reserve(states.size());
  for (const auto& vs : states) points.push_back(point_estimate(vs));
  return elbo_given_stats(states, accumulate_estep(trajectories, points, gamma, r_min), priors);
}

// One full CAVI sweep: refresh the point estimates, rebuild the reweighted
// q(z), apply every parameter update, and report the ELBO of the updated
// state against the frozen q(z).
struct SweepOutcome {
  ElboBreakdown breakdown;
  double elbo = 0.0;
  double log_vhat = 0.0;
};

inline SweepOutcome cavi_sweep(std::vector<VariationalState>& states,
                               std::span<const Trajectory> trajectories,
                               const PriorHyperparams& priors, double gamma, double r_min) {
  std::vector<PointEstimatePolicy> points;
  points.reserve(states.size());
  for (const auto& vs : states) points.push_back(point_estimate(vs));
  EStepStats stats = accumulate_estep(trajectories, points, gamma, r_min);
  for (std::size_t n = 0; n < states.size(); ++n) {
    apply_parameter_updates(states[n], stats.agents[n], priors);
  }
  SweepOutcome out;
  out.breakdown = elbo_given_stats(states, stats, priors);
  out.elbo = out.breakdown.total();
  out.log_vhat = stats.log_vhat;
  return out;
}

// Inner convergence loop of the learning algorithm: sweeps run until the
// relative ELBO change drops below `tolerance` or the sweep cap is reached.
struct CaviRun {
  std::vector<double> elbo_per_sweep;
  double final_elbo = 0.0;
  double final_log_vhat = 0.0;
  int sweeps = 0;
  bool converged = false;
};

inline CaviRun run_cavi(std::vector<VariationalState>& states,
                        std::span<const Trajectory> trajectories, const PriorHyperparams& priors,
                        double gamma, double r_min, double tolerance, int max_sweeps) {
  CaviRun run;
  double prev = 0.0;
  for (int s = 0; s < max_sweeps; ++s) {
    const SweepOutcome out = cavi_sweep(states, trajectories, priors, gamma, r_min);
    run.elbo_per_sweep.push_back(out.elbo);
    run.final_elbo = out.elbo;
    run.final_log_vhat = out.log_vhat;
    run.sweeps = s + 1;
    if (s > 0) {
      const double rel = std::abs((out.elbo - prev) / (prev != 0.0 ? prev : 1.0));
      if (rel < tolerance) {
        run.converged = true;
        break;
      }
    }
    prev = out.elbo;
  }
  return run;
}

// Drop trailing stick indices whose expected occupancy share fell below the
// threshold; node 0 is never dropped. Truncation-dependent Gamma parameters
// are refreshed so g = e + |Z| keeps holding exactly.
inline bool prune_nodes(VariationalState& vs, double occupancy_threshold,
                        const PriorHyperparams& priors) {
  if (!(occupancy_threshold > 0.0 && occupancy_threshold < 1.0)) {
    throw ConfigError("prune_nodes: threshold must lie in (0,1)");
  }
  if (vs.occupancy.empty() || vs.occupancy_total <= 0.0) return false;
  int keep = vs.num_nodes;
  while (keep > 1 &&
         vs.occupancy[static_cast<std::size_t>(keep - 1)] <
             occupancy_threshold * vs.occupancy_total) {
    --keep;
  }
  if (keep == vs.num_nodes) return false;

  VariationalState next;
  next.num_nodes = keep;
  next.num_actions = vs.num_actions;
  next.num_obs = vs.num_obs;
  const auto kz = static_cast<std::size_t>(keep);
  next.delta.assign(vs.delta.begin(), vs.delta.begin() + static_cast<std::ptrdiff_t>(kz));
  next.mu.assign(vs.mu.begin(), vs.mu.begin() + static_cast<std::ptrdiff_t>(kz));
  next.phi.resize(kz * static_cast<std::size_t>(vs.num_actions));
  for (int i = 0; i < keep; ++i) {
    for (int a = 0; a < vs.num_actions; ++a) {
      next.phi[next.phi_index(i, a)] = vs.phi[vs.phi_index(i, a)];
    }
  }
  const std::size_t rows = static_cast<std::size_t>(vs.num_actions) *
                           static_cast<std::size_t>(vs.num_obs) * kz;
  next.sigma.resize(rows * kz);
  next.lambda.resize(rows * kz);
  next.a_shape.resize(rows);
  next.b_rate.resize(rows);
  for (int a = 0; a < vs.num_actions; ++a) {
    for (int o = 0; o < vs.num_obs; ++o) {
      for (int i = 0; i < keep; ++i) {
        const std::size_t src = vs.stick_row(a, o, i);
        const std::size_t dst = next.stick_row(a, o, i);
        for (int j = 0; j < keep; ++j) {
          next.sigma[dst + static_cast<std::size_t>(j)] = vs.sigma[src + static_cast<std::size_t>(j)];
          next.lambda[dst + static_cast<std::size_t>(j)] = vs.lambda[src + static_cast<std::size_t>(j)];
        }
        next.a_shape[next.stick_index(a, o, i)] = priors.c + keep;
        double b_sum = 0.0;
        for (int j = 0; j < keep; ++j) {
          b_sum += digamma(next.lambda[dst + static_cast<std::size_t>(j)]) -
                   digamma(next.sigma[dst + static_cast<std::size_t>(j)] +
                           next.lambda[dst + static_cast<std::size_t>(j)]);
        }
        next.b_rate[next.stick_index(a, o, i)] = priors.d - b_sum;
      }
    }
  }
  next.g = priors.e + keep;
  double h_sum = 0.0;
  for (int i = 0; i < keep; ++i) {
    h_sum += digamma(next.mu[static_cast<std::size_t>(i)]) -
             digamma(next.delta[static_cast<std::size_t>(i)] + next.mu[static_cast<std::size_t>(i)]);
  }
  next.h = priors.f - h_sum;
  next.occupancy.assign(vs.occupancy.begin(), vs.occupancy.begin() + static_cast<std::ptrdiff_t>(kz));
  next.occupancy_total = 0.0;
  for (double v : next.occupancy) next.occupancy_total += v;
  next.check_positive();
  vs = std::move(next);
  return true;
}

// Initial posterior built from the first batch: the same node labelling as
// init_fsc_from_trajectories, with per-episode-averaged counts as pseudo
// observations of the update statistics.
inline VariationalState init_variational_state(std::span<const Trajectory> episodes, int agent,
                                               int cap, int num_actions, int num_obs,
                                               const PriorHyperparams& priors) {
  if (episodes.empty()) throw ConfigError("init_variational_state: no episodes");
  priors.validate();
  const FscPolicy seed = init_fsc_from_trajectories(episodes, agent, cap, num_actions, num_obs);
  const int z_count = seed.num_nodes;

  // Recover raw (unsmoothed, 1/K-scaled) counts by walking the same node
  // assignment the seed controller used.
  std::vector<double> eta_counts(static_cast<std::size_t>(z_count), 0.0);
  std::vector<double> act_counts(static_cast<std::size_t>(z_count) * static_cast<std::size_t>(num_actions), 0.0);
  std::vector<double> trans_counts(static_cast<std::size_t>(num_actions) * static_cast<std::size_t>(num_obs) *
                                       static_cast<std::size_t>(z_count) * static_cast<std::size_t>(z_count),
                                   0.0);
  std::map<std::pair<int, int>, int> signature_order;
  auto signature_index = [&](int a, int o) {
    const auto key = std::make_pair(a, o);
    auto it = signature_order.find(key);
    if (it == signature_order.end()) {
      it = signature_order.emplace(key, static_cast<int>(signature_order.size())).first;
    }
    return it->second;
  };
  auto node_of = [&](int sig) { return cap == 1 ? 0 : 1 + sig % (cap - 1); };
  const double scale = 1.0 / static_cast<double>(episodes.size());
  VariationalState vs;
  vs.num_nodes = z_count;
  vs.num_actions = num_actions;
  vs.num_obs = num_obs;
  for (const Trajectory& ep : episodes) {
    int node = 0;
    eta_counts[0] += scale;
    act_counts[static_cast<std::size_t>(ep.actions[0][static_cast<std::size_t>(agent)])] += scale;
    for (int t = 1; t <= ep.horizon(); ++t) {
      const int a_prev = ep.actions[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(agent)];
      const int obs = ep.observations[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(agent)];
      const int a_cur = ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(agent)];
      const int next = node_of(signature_index(a_prev, obs));
      trans_counts[vs.stick_row(a_prev, obs, node) + static_cast<std::size_t>(next)] += scale;
      act_counts[static_cast<std::size_t>(next) * static_cast<std::size_t>(num_actions) +
                 static_cast<std::size_t>(a_cur)] += scale;
      node = next;
    }
  }

  vs.g = priors.e + z_count;
  vs.h = priors.f;
  vs.a_shape.assign(static_cast<std::size_t>(num_actions) * static_cast<std::size_t>(num_obs) *
                        static_cast<std::size_t>(z_count),
                    priors.c + z_count);
  vs.b_rate.assign(vs.a_shape.size(), priors.d);
  AgentStats st;
  st.m0 = std::move(eta_counts);
  st.ma = std::move(act_counts);
  st.mt = std::move(trans_counts);
  vs.delta.resize(static_cast<std::size_t>(z_count));
  vs.mu.resize(static_cast<std::size_t>(z_count));
  vs.phi.resize(st.ma.size());
  vs.sigma.resize(st.mt.size());
  vs.lambda.resize(st.mt.size());
  apply_parameter_updates(vs, st, priors);
  return vs;
}

}  // namespace laacoex
