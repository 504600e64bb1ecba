#pragma once

// Stick-breaking variational posterior over FSC policies: expected-log stick
// constructions, point estimates, forward-backward smoothing, trajectory
// reweighting, the closed-form coordinate updates, and the ELBO surrogate.
//
// Index conventions per agent: i, j range over nodes (truncation level Z),
// a over actions, o over observations. Beta rows for the node-transition
// sticks are stored (a, o, i)-major, matching FscPolicy::omega.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "laacoex/digamma.hpp"
#include "laacoex/errors.hpp"
#include "laacoex/fsc.hpp"
#include "laacoex/trajectory.hpp"

namespace laacoex {

struct PriorHyperparams {
  double c = 0.1;  // Gamma shape for each alpha_{a,o,i}
  double d = 100.0;  // Gamma rate for each alpha_{a,o,i}
  double e = 0.1;  // Gamma shape for rho
  double f = 100.0;  // Gamma rate for rho
  double theta = 1.0;  // symmetric Dirichlet concentration over actions

  void validate() const {
    if (!(c > 0 && d > 0 && e > 0 && f > 0 && theta > 0)) {
      throw ConfigError("priors: hyperparameters must be strictly positive");
    }
  }
};

// Mean-field posterior parameters for one agent.
struct VariationalState {
  int num_nodes = 0;
  int num_actions = 0;
  int num_obs = 0;
  std::vector<double> delta;   // [Z]   Beta first parameter of q(u_i)
  std::vector<double> mu;      // [Z]   Beta second parameter of q(u_i)
  std::vector<double> phi;     // [Z*A] Dirichlet parameters of q(pi_i)
  std::vector<double> sigma;   // [A*O*Z*Z] Beta first parameter of q(V)
  std::vector<double> lambda;  // [A*O*Z*Z] Beta second parameter of q(V)
  double g = 0.0, h = 0.0;     // Gamma parameters of q(rho)
  std::vector<double> a_shape;  // [A*O*Z] Gamma shape of q(alpha)
  std::vector<double> b_rate;   // [A*O*Z] Gamma rate of q(alpha)

  // Expected node occupancy from the last E-step, used by pruning.
  std::vector<double> occupancy;  // [Z]
  double occupancy_total = 0.0;

  std::size_t phi_index(int i, int a) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(num_actions) +
           static_cast<std::size_t>(a);
  }
  std::size_t ao_index(int a, int o) const {
    return static_cast<std::size_t>(a) * static_cast<std::size_t>(num_obs) +
           static_cast<std::size_t>(o);
  }
  std::size_t stick_index(int a, int o, int i) const {
    return ao_index(a, o) * static_cast<std::size_t>(num_nodes) + static_cast<std::size_t>(i);
  }
  std::size_t stick_row(int a, int o, int i) const {
    return stick_index(a, o, i) * static_cast<std::size_t>(num_nodes);
  }

  void check_positive() const {
    auto check = [](std::span<const double> v, const char* what) {
      for (double x : v) {
        if (!(x > 0.0) || !std::isfinite(x)) {
          throw NumericalError(std::string("variational state: nonpositive ") + what);
        }
      }
    };
    check(delta, "delta");
    check(mu, "mu");
    check(phi, "phi");
    check(sigma, "sigma");
    check(lambda, "lambda");
    check(a_shape, "a");
    check(b_rate, "b");
    if (!(g > 0.0) || !(h > 0.0)) throw NumericalError("variational state: nonpositive (g,h)");
  }
};

// Expected log stick weights E[ln w_i] for a truncated stick-breaking row
// with Beta(first[i], second[i]) factors. Indices below the truncation use
// the Beta expectations; the final index takes the leftover product only.
inline void expected_log_sticks(std::span<const double> first, std::span<const double> second,
                                std::span<double> out) {
  const int z_count = static_cast<int>(out.size());
  double tail = 0.0;  // running sum of E[ln(1-u_m)] for m < i
  for (int i = 0; i < z_count; ++i) {
    if (i == z_count - 1) {
      out[static_cast<std::size_t>(i)] = tail;
      break;
    }
    const double a = first[static_cast<std::size_t>(i)];
    const double b = second[static_cast<std::size_t>(i)];
    const double dab = digamma(a + b);
    out[static_cast<std::size_t>(i)] = digamma(a) - dab + tail;
    tail += digamma(b) - dab;
  }
}

// Exponentiated expected-log policy parameters (unnormalized). The log
// tables are the primary representation; exp values are derived from them.
struct PointEstimatePolicy {
  int num_nodes = 0;
  int num_actions = 0;
  int num_obs = 0;
  std::vector<double> eta, log_eta;      // [Z]
  std::vector<double> pi, log_pi;        // [Z*A]
  std::vector<double> omega, log_omega;  // [A*O*Z*Z]

  std::size_t pi_index(int i, int a) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(num_actions) +
           static_cast<std::size_t>(a);
  }
  std::size_t omega_row(int a, int o, int i) const {
    return ((static_cast<std::size_t>(a) * static_cast<std::size_t>(num_obs) +
             static_cast<std::size_t>(o)) *
                static_cast<std::size_t>(num_nodes) +
            static_cast<std::size_t>(i)) *
           static_cast<std::size_t>(num_nodes);
  }
};

inline PointEstimatePolicy point_estimate(const VariationalState& vs) {
  PointEstimatePolicy p;
  p.num_nodes = vs.num_nodes;
  p.num_actions = vs.num_actions;
  p.num_obs = vs.num_obs;
  const auto z_count = static_cast<std::size_t>(vs.num_nodes);

  p.log_eta.resize(z_count);
  expected_log_sticks(vs.delta, vs.mu, p.log_eta);

  p.log_pi.resize(z_count * static_cast<std::size_t>(vs.num_actions));
  for (int i = 0; i < vs.num_nodes; ++i) {
    double total = 0.0;
    for (int a = 0; a < vs.num_actions; ++a) total += vs.phi[vs.phi_index(i, a)];
    const double dt = digamma(total);
    for (int a = 0; a < vs.num_actions; ++a) {
      p.log_pi[p.pi_index(i, a)] = digamma(vs.phi[vs.phi_index(i, a)]) - dt;
    }
  }

  p.log_omega.resize(static_cast<std::size_t>(vs.num_actions) *
                     static_cast<std::size_t>(vs.num_obs) * z_count * z_count);
  for (int a = 0; a < vs.num_actions; ++a) {
    for (int o = 0; o < vs.num_obs; ++o) {
      for (int i = 0; i < vs.num_nodes; ++i) {
        const std::size_t row = vs.stick_row(a, o, i);
        expected_log_sticks({vs.sigma.data() + row, z_count}, {vs.lambda.data() + row, z_count},
                            {p.log_omega.data() + p.omega_row(a, o, i), z_count});
      }
    }
  }

  auto exp_all = [](const std::vector<double>& logs, std::vector<double>& out) {
    out.resize(logs.size());
    for (std::size_t k = 0; k < logs.size(); ++k) out[k] = std::exp(logs[k]);
  };
  exp_all(p.log_eta, p.eta);
  exp_all(p.log_pi, p.pi);
  exp_all(p.log_omega, p.omega);
  return p;
}

// A proper controller viewed as a (trivially normalized) point estimate, so
// likelihood routines accept either representation.
inline PointEstimatePolicy as_point_estimate(const FscPolicy& fsc) {
  PointEstimatePolicy p;
  p.num_nodes = fsc.num_nodes;
  p.num_actions = fsc.num_actions;
  p.num_obs = fsc.num_obs;
  p.eta = fsc.eta;
  p.pi = fsc.pi;
  p.omega = fsc.omega;
  auto log_all = [](const std::vector<double>& v, std::vector<double>& out) {
    out.resize(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
      out[k] = v[k] > 0.0 ? std::log(v[k]) : -std::numeric_limits<double>::infinity();
    }
  };
  log_all(p.eta, p.log_eta);
  log_all(p.pi, p.log_pi);
  log_all(p.omega, p.log_omega);
  return p;
}

// Row-normalized point estimate; the greedy controller used for behavior
// updates and evaluation.
inline FscPolicy normalize_point_estimate(const PointEstimatePolicy& p) {
  FscPolicy fsc;
  fsc.num_nodes = p.num_nodes;
  fsc.num_actions = p.num_actions;
  fsc.num_obs = p.num_obs;
  fsc.eta = p.eta;
  fsc.pi = p.pi;
  fsc.omega = p.omega;
  auto normalize = [](std::span<double> row) {
    double sum = 0.0;
    for (double v : row) sum += v;
    if (!(sum > 0.0)) throw NumericalError("normalize_point_estimate: zero row");
    for (double& v : row) v /= sum;
  };
  normalize(fsc.eta);
  for (int z = 0; z < fsc.num_nodes; ++z) normalize(fsc.pi_row(z));
  for (int a = 0; a < fsc.num_actions; ++a) {
    for (int o = 0; o < fsc.num_obs; ++o) {
      for (int i = 0; i < fsc.num_nodes; ++i) normalize(fsc.omega_row(i, a, o));
    }
  }
  fsc.validate();
  return fsc;
}

// Scaled forward messages for one agent history. alpha_hat rows sum to one;
// log_prefix[tau] is ln p(a_{0:tau} | o_{1:tau}).
struct ForwardMessages {
  int z_count = 0;
  int steps = 0;                  // t+1
  std::vector<double> alpha_hat;  // [steps*Z]
  std::vector<double> log_step;   // ln c_tau per step
  std::vector<double> log_prefix;  // prefix sums of log_step

  std::span<const double> row(int tau) const {
    return {alpha_hat.data() + static_cast<std::size_t>(tau) * static_cast<std::size_t>(z_count),
            static_cast<std::size_t>(z_count)};
  }
  double log_likelihood() const { return log_prefix.empty() ? 0.0 : log_prefix.back(); }
};

namespace detail {

// One transition kernel entry: omega(j | i, a_prev, o) * pi(a_cur | j).
struct StepKernel {
  const double* omega_rows;  // Z rows of length Z, source-major
  const double* pi_col;      // pi(:, a_cur) with stride A
  int z_count;
  int stride;

  double operator()(int i, int j) const {
    return omega_rows[static_cast<std::size_t>(i) * static_cast<std::size_t>(z_count) +
                      static_cast<std::size_t>(j)] *
           pi_col[static_cast<std::size_t>(j) * static_cast<std::size_t>(stride)];
  }
};

inline StepKernel step_kernel(const PointEstimatePolicy& p, int a_prev, int o, int a_cur) {
  return StepKernel{p.omega.data() + p.omega_row(a_prev, o, 0),
                    p.pi.data() + static_cast<std::size_t>(a_cur), p.num_nodes, p.num_actions};
}

}  // namespace detail

inline ForwardMessages forward_messages(const PointEstimatePolicy& p, std::span<const int> actions,
                                        std::span<const int> observations) {
  if (actions.empty() || observations.size() + 1 != actions.size()) {
    throw ConfigError("forward_messages: need t+1 actions and t observations");
  }
  ForwardMessages fm;
  fm.z_count = p.num_nodes;
  fm.steps = static_cast<int>(actions.size());
  const auto z_count = static_cast<std::size_t>(p.num_nodes);
  fm.alpha_hat.assign(static_cast<std::size_t>(fm.steps) * z_count, 0.0);
  fm.log_step.resize(static_cast<std::size_t>(fm.steps));
  fm.log_prefix.resize(static_cast<std::size_t>(fm.steps));

  std::vector<double> cur(z_count);
  for (int i = 0; i < p.num_nodes; ++i) {
    cur[static_cast<std::size_t>(i)] =
        p.eta[static_cast<std::size_t>(i)] * p.pi[p.pi_index(i, actions[0])];
  }
  double log_acc = 0.0;
  for (int tau = 0; tau < fm.steps; ++tau) {
    if (tau > 0) {
      const auto kernel = detail::step_kernel(p, actions[static_cast<std::size_t>(tau - 1)],
                                              observations[static_cast<std::size_t>(tau - 1)],
                                              actions[static_cast<std::size_t>(tau)]);
      std::vector<double> next(z_count, 0.0);
      const auto prev = fm.row(tau - 1);
      for (int i = 0; i < p.num_nodes; ++i) {
        const double ai = prev[static_cast<std::size_t>(i)];
        if (ai == 0.0) continue;
        for (int j = 0; j < p.num_nodes; ++j) {
          next[static_cast<std::size_t>(j)] += ai * kernel(i, j);
        }
      }
      cur.swap(next);
    }
    double sum = 0.0;
    for (double v : cur) sum += v;
    if (!(sum > 0.0)) {
      throw NumericalError("forward_messages: impossible history under the point estimate");
    }
    for (int i = 0; i < p.num_nodes; ++i) {
      fm.alpha_hat[static_cast<std::size_t>(tau) * z_count + static_cast<std::size_t>(i)] =
          cur[static_cast<std::size_t>(i)] / sum;
    }
    std::copy(fm.alpha_hat.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(tau) * z_count),
              fm.alpha_hat.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(tau) + 1) * z_count),
              cur.begin());
    fm.log_step[static_cast<std::size_t>(tau)] = std::log(sum);
    log_acc += fm.log_step[static_cast<std::size_t>(tau)];
    fm.log_prefix[static_cast<std::size_t>(tau)] = log_acc;
  }
  return fm;
}

inline double history_log_likelihood(const PointEstimatePolicy& p, std::span<const int> actions,
                                     std::span<const int> observations) {
  return forward_messages(p, actions, observations).log_likelihood();
}

// Normalized smoothed node marginals for one history endpoint t: singleton
// marginals for tau = 0..t and pairwise marginals for tau = 1..t, plus the
// reweighting scalar attached by the caller.
struct QzMarginals {
  int z_count = 0;
  int t = 0;
  double nu = 1.0;
  double log_likelihood = 0.0;
  std::vector<double> singleton;  // [(t+1)*Z]
  std::vector<double> pairwise;   // [t*Z*Z]

  double single(int tau, int i) const {
    return singleton[static_cast<std::size_t>(tau) * static_cast<std::size_t>(z_count) +
                     static_cast<std::size_t>(i)];
  }
  double pair(int tau, int i, int j) const {  // tau in 1..t
    return pairwise[((static_cast<std::size_t>(tau - 1)) * static_cast<std::size_t>(z_count) +
                     static_cast<std::size_t>(i)) *
                        static_cast<std::size_t>(z_count) +
                    static_cast<std::size_t>(j)];
  }
};

// Exact forward-backward smoothing against the (possibly unnormalized) point
// estimate for the sub-history ending at t.
inline QzMarginals smoothed_marginals(const PointEstimatePolicy& p, std::span<const int> actions,
                                      std::span<const int> observations, int t) {
  if (t < 0 || t >= static_cast<int>(actions.size())) {
    throw ConfigError("smoothed_marginals: endpoint out of range");
  }
  const auto fm = forward_messages(p, actions.subspan(0, static_cast<std::size_t>(t) + 1),
                                   observations.subspan(0, static_cast<std::size_t>(t)));
  const int z_count = p.num_nodes;
  const auto zs = static_cast<std::size_t>(z_count);

  QzMarginals qm;
  qm.z_count = z_count;
  qm.t = t;
  qm.log_likelihood = fm.log_likelihood();
  qm.singleton.assign((static_cast<std::size_t>(t) + 1) * zs, 0.0);
  qm.pairwise.assign(static_cast<std::size_t>(t) * zs * zs, 0.0);

  // Scaled backward messages: beta_hat_t = 1, divided by c_tau at each step.
  std::vector<double> beta(zs, 1.0);
  std::vector<double> prev(zs);
  for (int tau = t; tau >= 0; --tau) {
    const auto arow = fm.row(tau);
    double norm = 0.0;
    for (int i = 0; i < z_count; ++i) norm += arow[static_cast<std::size_t>(i)] * beta[static_cast<std::size_t>(i)];
    for (int i = 0; i < z_count; ++i) {
      qm.singleton[static_cast<std::size_t>(tau) * zs + static_cast<std::size_t>(i)] =
          arow[static_cast<std::size_t>(i)] * beta[static_cast<std::size_t>(i)] / norm;
    }
    if (tau == 0) break;
    const auto kernel = detail::step_kernel(p, actions[static_cast<std::size_t>(tau - 1)],
                                            observations[static_cast<std::size_t>(tau - 1)],
                                            actions[static_cast<std::size_t>(tau)]);
    const auto aprev = fm.row(tau - 1);
    const double c_tau = std::exp(fm.log_step[static_cast<std::size_t>(tau)]);
    double pair_norm = 0.0;
    double* pair_block = qm.pairwise.data() + static_cast<std::size_t>(tau - 1) * zs * zs;
    for (int i = 0; i < z_count; ++i) {
      for (int j = 0; j < z_count; ++j) {
        const double v = aprev[static_cast<std::size_t>(i)] * kernel(i, j) *
                         beta[static_cast<std::size_t>(j)];
        pair_block[static_cast<std::size_t>(i) * zs + static_cast<std::size_t>(j)] = v;
        pair_norm += v;
      }
    }
    for (std::size_t k = 0; k < zs * zs; ++k) pair_block[k] /= pair_norm;
    // beta_hat_{tau-1}(i) = sum_j kernel(i,j) beta_hat_tau(j) / c_tau
    for (int i = 0; i < z_count; ++i) {
      double s = 0.0;
      for (int j = 0; j < z_count; ++j) s += kernel(i, j) * beta[static_cast<std::size_t>(j)];
      prev[static_cast<std::size_t>(i)] = s / c_tau;
    }
    beta.swap(prev);
  }
  return qm;
}

}  // namespace laacoex
