#pragma once

// Finite state controllers: stochastic execution, epsilon-greedy behavior
// wrappers, history likelihoods, data-driven initialization, and the text
// serialization format.

#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "laacoex/errors.hpp"
#include "laacoex/rng.hpp"
#include "laacoex/text_io.hpp"
#include "laacoex/trajectory.hpp"

namespace laacoex {

inline constexpr double kRowSumTolerance = 1e-12;

// Stochastic controller <A, O, Z, eta, omega, pi>. Rows are stored flat;
// omega uses (action, observation, source node)-major layout so its rows line
// up with the variational tensors.
struct FscPolicy {
  int num_nodes = 0;
  int num_actions = 0;
  int num_obs = 0;
  std::vector<double> eta;    // [Z]
  std::vector<double> pi;     // [Z*A], row per node
  std::vector<double> omega;  // [A*O*Z*Z], row per (a,o,i) over destination j

  std::span<const double> eta_row() const { return {eta.data(), static_cast<std::size_t>(num_nodes)}; }
  std::span<const double> pi_row(int z) const {
    return {pi.data() + static_cast<std::size_t>(z) * static_cast<std::size_t>(num_actions),
            static_cast<std::size_t>(num_actions)};
  }
  std::span<double> pi_row(int z) {
    return {pi.data() + static_cast<std::size_t>(z) * static_cast<std::size_t>(num_actions),
            static_cast<std::size_t>(num_actions)};
  }
  std::size_t omega_index(int a, int o, int i) const {
    return ((static_cast<std::size_t>(a) * static_cast<std::size_t>(num_obs) +
             static_cast<std::size_t>(o)) *
                static_cast<std::size_t>(num_nodes) +
            static_cast<std::size_t>(i)) *
           static_cast<std::size_t>(num_nodes);
  }
  std::span<const double> omega_row(int i, int a, int o) const {
    return {omega.data() + omega_index(a, o, i), static_cast<std::size_t>(num_nodes)};
  }
  std::span<double> omega_row(int i, int a, int o) {
    return {omega.data() + omega_index(a, o, i), static_cast<std::size_t>(num_nodes)};
  }

  void validate() const {
    auto check_row = [](std::span<const double> row, const char* what) {
      double sum = 0.0;
      for (double v : row) {
        if (!(v >= 0.0)) throw ConfigError(std::string("fsc: negative entry in ") + what);
        sum += v;
      }
      if (std::abs(sum - 1.0) > kRowSumTolerance) {
        throw ConfigError(std::string("fsc: row of ") + what + " does not sum to 1");
      }
    };
    if (num_nodes < 1 || num_actions < 1 || num_obs < 1) {
      throw ConfigError("fsc: dimensions must be positive");
    }
    if (eta.size() != static_cast<std::size_t>(num_nodes) ||
        pi.size() != static_cast<std::size_t>(num_nodes) * static_cast<std::size_t>(num_actions) ||
        omega.size() != static_cast<std::size_t>(num_actions) * static_cast<std::size_t>(num_obs) *
                            static_cast<std::size_t>(num_nodes) * static_cast<std::size_t>(num_nodes)) {
      throw ConfigError("fsc: table sizes inconsistent with dimensions");
    }
    check_row(eta_row(), "eta");
    for (int z = 0; z < num_nodes; ++z) check_row(pi_row(z), "pi");
    for (int a = 0; a < num_actions; ++a) {
      for (int o = 0; o < num_obs; ++o) {
        for (int i = 0; i < num_nodes; ++i) check_row(omega_row(i, a, o), "omega");
      }
    }
  }
};

// Single-node controller with uniform action choice; the data-collection
// policy before anything has been learned.
inline FscPolicy uniform_fsc(int num_actions, int num_obs) {
  FscPolicy p;
  p.num_nodes = 1;
  p.num_actions = num_actions;
  p.num_obs = num_obs;
  p.eta = {1.0};
  p.pi.assign(static_cast<std::size_t>(num_actions), 1.0 / num_actions);
  p.omega.assign(static_cast<std::size_t>(num_actions) * static_cast<std::size_t>(num_obs), 1.0);
  return p;
}

struct SampledStep {
  int node = 0;
  int action = 0;
  double action_prob = 0.0;  // exact probability of the sampled action
};

inline SampledStep sample_initial_step(const FscPolicy& p, Rng& rng) {
  SampledStep s;
  s.node = rng.sample_index(p.eta_row());
  s.action = rng.sample_index(p.pi_row(s.node));
  s.action_prob = p.pi_row(s.node)[static_cast<std::size_t>(s.action)];
  return s;
}

inline SampledStep sample_episode_step(const FscPolicy& p, int current_node, int last_action,
                                       int new_obs, Rng& rng) {
  if (current_node < 0 || current_node >= p.num_nodes || last_action < 0 ||
      last_action >= p.num_actions || new_obs < 0 || new_obs >= p.num_obs) {
    throw ConfigError("sample_episode_step: index out of range");
  }
  SampledStep s;
  s.node = rng.sample_index(p.omega_row(current_node, last_action, new_obs));
  s.action = rng.sample_index(p.pi_row(s.node));
  s.action_prob = p.pi_row(s.node)[static_cast<std::size_t>(s.action)];
  return s;
}

// Epsilon-greedy wrapper around a point-estimate controller. The node always
// evolves through omega using the action actually taken; only the action draw
// is mixed with the uniform distribution.
struct BehaviorPolicy {
  FscPolicy base;
  double epsilon = 0.0;

  double action_prob(int node, int action) const {
    return (1.0 - epsilon) * base.pi_row(node)[static_cast<std::size_t>(action)] +
           epsilon / base.num_actions;
  }

  SampledStep sample_initial(Rng& rng) const {
    SampledStep s;
    s.node = rng.sample_index(base.eta_row());
    s.action = sample_action(s.node, rng);
    s.action_prob = action_prob(s.node, s.action);
    return s;
  }

  SampledStep sample_step(int current_node, int last_action, int new_obs, Rng& rng) const {
    SampledStep s;
    s.node = rng.sample_index(base.omega_row(current_node, last_action, new_obs));
    s.action = sample_action(s.node, rng);
    s.action_prob = action_prob(s.node, s.action);
    return s;
  }

 private:
  int sample_action(int node, Rng& rng) const {
    if (rng.bernoulli(epsilon)) return static_cast<int>(rng.next_below(static_cast<std::uint32_t>(base.num_actions)));
    return rng.sample_index(base.pi_row(node));
  }
};

struct EpsilonSchedule {
  enum class Curve { Linear, Exponential };
  Curve curve = Curve::Linear;
  double start = 0.9;
  double end = 0.2;
  int total_iters = 50;
};

inline double epsilon_at(const EpsilonSchedule& s, int iter) {
  if (iter < 0) throw ConfigError("epsilon_at: negative iteration");
  if (iter >= s.total_iters) return s.end;
  const double frac = static_cast<double>(iter) / s.total_iters;
  if (s.curve == EpsilonSchedule::Curve::Linear) {
    return s.start - (s.start - s.end) * frac;
  }
  return s.start * std::pow(s.end / s.start, frac);
}

// p(a_{0:t} | o_{1:t}, policy) by the forward recursion over nodes.
// Scaled messages keep the running product in range; the result is the
// product of per-step scales.
inline double history_likelihood(const FscPolicy& p, std::span<const int> actions,
                                 std::span<const int> observations) {
  if (actions.empty() || observations.size() + 1 != actions.size()) {
    throw ConfigError("history_likelihood: need t+1 actions and t observations");
  }
  const int z_count = p.num_nodes;
  std::vector<double> alpha(static_cast<std::size_t>(z_count));
  std::vector<double> next(static_cast<std::size_t>(z_count));
  double log_lik = 0.0;
  for (int i = 0; i < z_count; ++i) {
    alpha[static_cast<std::size_t>(i)] =
        p.eta[static_cast<std::size_t>(i)] * p.pi_row(i)[static_cast<std::size_t>(actions[0])];
  }
  auto rescale = [&](std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    if (sum <= 0.0) return false;
    for (double& x : v) x /= sum;
    log_lik += std::log(sum);
    return true;
  };
  if (!rescale(alpha)) return 0.0;
  for (std::size_t tau = 1; tau < actions.size(); ++tau) {
    const int a_prev = actions[tau - 1];
    const int obs = observations[tau - 1];
    const int a_cur = actions[tau];
    for (int j = 0; j < z_count; ++j) next[static_cast<std::size_t>(j)] = 0.0;
    for (int i = 0; i < z_count; ++i) {
      const double ai = alpha[static_cast<std::size_t>(i)];
      if (ai == 0.0) continue;
      const auto row = p.omega_row(i, a_prev, obs);
      for (int j = 0; j < z_count; ++j) next[static_cast<std::size_t>(j)] += ai * row[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < z_count; ++j) {
      next[static_cast<std::size_t>(j)] *= p.pi_row(j)[static_cast<std::size_t>(a_cur)];
    }
    alpha.swap(next);
    if (!rescale(alpha)) return 0.0;
  }
  return std::exp(log_lik);
}

// Data-driven controller initialization: node 0 is the start node and each
// distinct (previous action, observation) signature seen by the agent claims
// a node, up to `cap`. Rows are add-one-smoothed empirical counts.
inline FscPolicy init_fsc_from_trajectories(std::span<const Trajectory> episodes, int agent,
                                            int cap, int num_actions, int num_obs,
                                            double smoothing = 1.0) {
  if (episodes.empty()) throw ConfigError("init_fsc_from_trajectories: no episodes");
  if (cap < 1) throw ConfigError("init_fsc_from_trajectories: cap must be >= 1");

  std::map<std::pair<int, int>, int> signature_order;  // (a,o) -> first-seen index
  auto signature_index = [&](int a, int o) {
    const auto key = std::make_pair(a, o);
    auto it = signature_order.find(key);
    if (it == signature_order.end()) {
      it = signature_order.emplace(key, static_cast<int>(signature_order.size())).first;
    }
    return it->second;
  };
  auto node_of = [&](int sig) { return cap == 1 ? 0 : 1 + sig % (cap - 1); };

  // First pass fixes the node labelling, second pass counts transitions.
  for (const Trajectory& ep : episodes) {
    for (int t = 1; t <= ep.horizon(); ++t) {
      signature_index(ep.actions[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(agent)],
                      ep.observations[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(agent)]);
    }
  }
  const int z_count = std::max(1, std::min(1 + static_cast<int>(signature_order.size()), cap));

  FscPolicy p;
  p.num_nodes = z_count;
  p.num_actions = num_actions;
  p.num_obs = num_obs;
  p.eta.assign(static_cast<std::size_t>(z_count), smoothing);
  p.pi.assign(static_cast<std::size_t>(z_count) * static_cast<std::size_t>(num_actions), smoothing);
  p.omega.assign(static_cast<std::size_t>(num_actions) * static_cast<std::size_t>(num_obs) *
                     static_cast<std::size_t>(z_count) * static_cast<std::size_t>(z_count),
                 smoothing);

  for (const Trajectory& ep : episodes) {
    int node = 0;
    p.eta[0] += 1.0;
    p.pi_row(0)[static_cast<std::size_t>(ep.actions[0][static_cast<std::size_t>(agent)])] += 1.0;
    for (int t = 1; t <= ep.horizon(); ++t) {
      const int a_prev = ep.actions[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(agent)];
      const int obs = ep.observations[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(agent)];
      const int a_cur = ep.actions[static_cast<std::size_t>(t)][static_cast<std::size_t>(agent)];
      const int next = node_of(signature_index(a_prev, obs));
      p.omega_row(node, a_prev, obs)[static_cast<std::size_t>(next)] += 1.0;
      p.pi_row(next)[static_cast<std::size_t>(a_cur)] += 1.0;
      node = next;
    }
  }

  auto normalize = [](std::span<double> row) {
    double sum = 0.0;
    for (double v : row) sum += v;
    for (double& v : row) v /= sum;
  };
  normalize(p.eta);
  for (int z = 0; z < z_count; ++z) normalize(p.pi_row(z));
  for (int a = 0; a < num_actions; ++a) {
    for (int o = 0; o < num_obs; ++o) {
      for (int i = 0; i < z_count; ++i) normalize(p.omega_row(i, a, o));
    }
  }
  p.validate();
  return p;
}

// Text serialization: dimension header, then eta / pi / omega blocks with 17
// significant digits per entry.
inline void write_fsc(const std::string& path, const FscPolicy& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open policy file for writing: " + path);
  out << "# laacoex fsc v1\n";
  out << "dims " << p.num_nodes << ' ' << p.num_actions << ' ' << p.num_obs << '\n';
  out << "eta";
  for (double v : p.eta) out << ' ' << fmt_double(v);
  out << '\n';
  for (int z = 0; z < p.num_nodes; ++z) {
    out << "pi " << z;
    for (double v : p.pi_row(z)) out << ' ' << fmt_double(v);
    out << '\n';
  }
  for (int a = 0; a < p.num_actions; ++a) {
    for (int o = 0; o < p.num_obs; ++o) {
      for (int i = 0; i < p.num_nodes; ++i) {
        out << "omega " << a << ' ' << o << ' ' << i;
        for (double v : p.omega_row(i, a, o)) out << ' ' << fmt_double(v);
        out << '\n';
      }
    }
  }
  if (!out) throw ConfigError("failed while writing policy file: " + path);
}

inline FscPolicy read_fsc(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open policy file: " + path);
  FscPolicy p;
  std::string line;
  int line_no = 0;
  bool have_dims = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto ctx = path + ":" + std::to_string(line_no);
    const auto tok = split_ws(line);
    if (tok[0] == "dims") {
      if (tok.size() != 4) throw ConfigError(ctx + ": dims needs three values");
      p.num_nodes = static_cast<int>(parse_int(tok[1], ctx));
      p.num_actions = static_cast<int>(parse_int(tok[2], ctx));
      p.num_obs = static_cast<int>(parse_int(tok[3], ctx));
      if (p.num_nodes < 1 || p.num_actions < 1 || p.num_obs < 1) {
        throw ConfigError(ctx + ": dims must be positive");
      }
      p.eta.assign(static_cast<std::size_t>(p.num_nodes), 0.0);
      p.pi.assign(static_cast<std::size_t>(p.num_nodes) * static_cast<std::size_t>(p.num_actions), 0.0);
      p.omega.assign(static_cast<std::size_t>(p.num_actions) * static_cast<std::size_t>(p.num_obs) *
                         static_cast<std::size_t>(p.num_nodes) * static_cast<std::size_t>(p.num_nodes),
                     0.0);
      have_dims = true;
    } else if (tok[0] == "eta") {
      if (!have_dims) throw ConfigError(ctx + ": dims line must come first");
      if (tok.size() != static_cast<std::size_t>(p.num_nodes) + 1) throw ConfigError(ctx + ": eta length mismatch");
      for (int i = 0; i < p.num_nodes; ++i) p.eta[static_cast<std::size_t>(i)] = parse_double(tok[static_cast<std::size_t>(i + 1)], ctx);
    } else if (tok[0] == "pi") {
      if (!have_dims) throw ConfigError(ctx + ": dims line must come first");
      if (tok.size() != static_cast<std::size_t>(p.num_actions) + 2) throw ConfigError(ctx + ": pi length mismatch");
      const int z = static_cast<int>(parse_int(tok[1], ctx));
      if (z < 0 || z >= p.num_nodes) throw ConfigError(ctx + ": pi node out of range");
      auto row = p.pi_row(z);
      for (int a = 0; a < p.num_actions; ++a) row[static_cast<std::size_t>(a)] = parse_double(tok[static_cast<std::size_t>(a + 2)], ctx);
    } else if (tok[0] == "omega") {
      if (!have_dims) throw ConfigError(ctx + ": dims line must come first");
      if (tok.size() != static_cast<std::size_t>(p.num_nodes) + 4) throw ConfigError(ctx + ": omega length mismatch");
      const int a = static_cast<int>(parse_int(tok[1], ctx));
      const int o = static_cast<int>(parse_int(tok[2], ctx));
      const int i = static_cast<int>(parse_int(tok[3], ctx));
      if (a < 0 || a >= p.num_actions || o < 0 || o >= p.num_obs || i < 0 || i >= p.num_nodes) {
        throw ConfigError(ctx + ": omega indices out of range");
      }
      auto row = p.omega_row(i, a, o);
      for (int j = 0; j < p.num_nodes; ++j) row[static_cast<std::size_t>(j)] = parse_double(tok[static_cast<std::size_t>(j + 4)], ctx);
    } else {
      throw ConfigError(ctx + ": unknown record '" + tok[0] + "'");
    }
  }
  if (!have_dims) throw ConfigError(path + ": missing dims header");
  p.validate();
  return p;
}

}  // namespace laacoex
