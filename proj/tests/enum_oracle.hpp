#pragma once

// Exhaustive node-path enumeration for small controllers: likelihood plus
// singleton and pairwise posterior marginals. Test-side oracle, independent
// of the message-passing implementation.

#include <vector>

#include "laacoex/rng.hpp"
#include "laacoex/variational.hpp"

namespace laacoex_test {

struct EnumMarginals {
  double likelihood = 0.0;
  std::vector<double> singleton;  // [(t+1)*Z]
  std::vector<double> pairwise;   // [t*Z*Z]
};

inline EnumMarginals enumerate_marginals(const laacoex::PointEstimatePolicy& p,
                                         const std::vector<int>& actions,
                                         const std::vector<int>& observations) {
  const int z_count = p.num_nodes;
  const int t_max = static_cast<int>(actions.size()) - 1;
  const auto zs = static_cast<std::size_t>(z_count);
  EnumMarginals out;
  out.singleton.assign((static_cast<std::size_t>(t_max) + 1) * zs, 0.0);
  out.pairwise.assign(static_cast<std::size_t>(t_max) * zs * zs, 0.0);
  std::vector<int> path(static_cast<std::size_t>(t_max) + 1, 0);
  while (true) {
    double w = p.eta[static_cast<std::size_t>(path[0])] *
               p.pi[p.pi_index(path[0], actions[0])];
    for (int tau = 1; tau <= t_max; ++tau) {
      const std::size_t row = p.omega_row(actions[static_cast<std::size_t>(tau - 1)],
                                          observations[static_cast<std::size_t>(tau - 1)],
                                          path[static_cast<std::size_t>(tau - 1)]);
      w *= p.omega[row + static_cast<std::size_t>(path[static_cast<std::size_t>(tau)])] *
           p.pi[p.pi_index(path[static_cast<std::size_t>(tau)], actions[static_cast<std::size_t>(tau)])];
    }
    out.likelihood += w;
    for (int tau = 0; tau <= t_max; ++tau) {
      out.singleton[static_cast<std::size_t>(tau) * zs +
                    static_cast<std::size_t>(path[static_cast<std::size_t>(tau)])] += w;
    }
    for (int tau = 1; tau <= t_max; ++tau) {
      out.pairwise[(static_cast<std::size_t>(tau - 1) * zs +
                    static_cast<std::size_t>(path[static_cast<std::size_t>(tau - 1)])) *
                       zs +
                   static_cast<std::size_t>(path[static_cast<std::size_t>(tau)])] += w;
    }
    int pos = t_max;
    while (pos >= 0 && path[static_cast<std::size_t>(pos)] == z_count - 1) {
      path[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<std::size_t>(pos)];
  }
  for (double& v : out.singleton) v /= out.likelihood;
  for (double& v : out.pairwise) v /= out.likelihood;
  return out;
}

// Unnormalized tables with entries in (0.05, 1.05); the shape a point
// estimate takes after exponentiating expected logs.
inline laacoex::PointEstimatePolicy random_point(int z_count, int num_actions, int num_obs,
                                                 laacoex::Rng& rng) {
  laacoex::PointEstimatePolicy p;
  p.num_nodes = z_count;
  p.num_actions = num_actions;
  p.num_obs = num_obs;
  auto fill = [&](std::vector<double>& v, std::vector<double>& logs, std::size_t size) {
    v.resize(size);
    logs.resize(size);
    for (std::size_t i = 0; i < size; ++i) {
      v[i] = 0.05 + rng.next_double();
      logs[i] = std::log(v[i]);
    }
  };
  fill(p.eta, p.log_eta, static_cast<std::size_t>(z_count));
  fill(p.pi, p.log_pi, static_cast<std::size_t>(z_count) * static_cast<std::size_t>(num_actions));
  fill(p.omega, p.log_omega,
       static_cast<std::size_t>(num_actions) * static_cast<std::size_t>(num_obs) *
           static_cast<std::size_t>(z_count) * static_cast<std::size_t>(z_count));
  return p;
}

inline laacoex::VariationalState random_state(int z_count, int num_actions, int num_obs,
                                              laacoex::Rng& rng) {
  laacoex::VariationalState vs;
  vs.num_nodes = z_count;
  vs.num_actions = num_actions;
  vs.num_obs = num_obs;
  auto fill = [&](std::vector<double>& v, std::size_t size, double lo, double hi) {
    v.resize(size);
    for (auto& x : v) x = lo + (hi - lo) * rng.next_double();
  };
  const auto zs = static_cast<std::size_t>(z_count);
  fill(vs.delta, zs, 0.5, 3.0);
  fill(vs.mu, zs, 0.5, 3.0);
  fill(vs.phi, zs * static_cast<std::size_t>(num_actions), 0.5, 4.0);
  const std::size_t rows = static_cast<std::size_t>(num_actions) * static_cast<std::size_t>(num_obs) * zs;
  fill(vs.sigma, rows * zs, 0.5, 3.0);
  fill(vs.lambda, rows * zs, 0.5, 3.0);
  fill(vs.a_shape, rows, 0.5, 3.0);
  fill(vs.b_rate, rows, 0.5, 3.0);
  vs.g = 0.5 + rng.next_double() * 3.0;
  vs.h = 0.5 + rng.next_double() * 3.0;
  return vs;
}

}  // namespace laacoex_test
