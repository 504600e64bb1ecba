#pragma once

// Experiment configuration file, run orchestration (simulate / learn /
// evaluate), the four trace CSVs, and the summary report.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "laacoex/learn.hpp"
#include "laacoex/text_io.hpp"

namespace laacoex {

struct ExperimentConfig {
  SimConfig sim;
  PriorHyperparams priors;
  int episodes = 200;
  int horizon = 50;
  int max_outer_iters = 50;
  int max_cavi_sweeps = 100;
  double elbo_tolerance = 1e-5;
  std::string epsilon_curve = "linear";
  double epsilon_start = 0.9;
  double epsilon_end = 0.2;
  int node_cap = 10;
  double prune_threshold = 1e-3;
  std::vector<double> obs_bin_edges = default_observation_bin_edges();
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "out";
  int workers = 1;

  EpsilonSchedule epsilon_schedule() const {
    EpsilonSchedule s;
    if (epsilon_curve == "linear") {
      s.curve = EpsilonSchedule::Curve::Linear;
    } else if (epsilon_curve == "exponential") {
      s.curve = EpsilonSchedule::Curve::Exponential;
    } else {
      throw ConfigError("epsilon_curve must be 'linear' or 'exponential'");
    }
    s.start = epsilon_start;
    s.end = epsilon_end;
    s.total_iters = max_outer_iters;
    return s;
  }

  LearnOptions learn_options() const {
    LearnOptions opt;
    opt.sim = sim;
    opt.priors = priors;
    opt.episodes = episodes;
    opt.horizon = horizon;
    opt.max_outer_iters = max_outer_iters;
    opt.max_cavi_sweeps = max_cavi_sweeps;
    opt.elbo_tolerance = elbo_tolerance;
    opt.epsilon = epsilon_schedule();
    opt.node_cap = node_cap;
    opt.prune_threshold = prune_threshold;
    opt.bin_edges = obs_bin_edges;
    opt.seed = seed;
    opt.workers = workers;
    return opt;
  }

  void validate() const {
    sim.validate();
    priors.validate();
    validate_bin_edges(obs_bin_edges);
    if (!seed_set) throw ConfigError("a master seed is required ([run] seed or --seed)");
    if (episodes < 1 || horizon < 1) throw ConfigError("episodes and horizon must be >= 1");
    if (max_outer_iters < 0 || max_cavi_sweeps < 1) throw ConfigError("iteration caps invalid");
    if (!(elbo_tolerance > 0)) throw ConfigError("elbo_tolerance must be positive");
    if (node_cap < 1) throw ConfigError("node_cap must be >= 1");
    if (!(prune_threshold > 0 && prune_threshold < 1)) {
      throw ConfigError("prune_threshold must lie in (0,1)");
    }
    if (!(epsilon_start > 0 && epsilon_start < 1) || !(epsilon_end > 0 && epsilon_end <= epsilon_start)) {
      throw ConfigError("epsilon schedule endpoints invalid");
    }
    if (workers < 1) throw ConfigError("workers must be >= 1");
    epsilon_schedule();  // validates the curve name
  }
};

namespace detail {

inline std::vector<double> parse_number_list(const std::string& value, const std::string& ctx) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    // trim
    while (!item.empty() && (item.front() == ' ' || item.front() == '\t')) item.erase(item.begin());
    while (!item.empty() && (item.back() == ' ' || item.back() == '\t' || item.back() == '\r')) item.pop_back();
    if (item.empty()) throw ConfigError(ctx + ": empty list entry");
    out.push_back(parse_double(item, ctx));
  }
  if (out.empty()) throw ConfigError(ctx + ": empty list");
  return out;
}

inline std::map<int, int> parse_int_map(const std::string& value, const std::string& ctx) {
  std::map<int, int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(ctx + ": expected key:value pairs");
    std::string k = item.substr(0, colon), v = item.substr(colon + 1);
    auto trim = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
    };
    trim(k);
    trim(v);
    out[static_cast<int>(parse_int(k, ctx))] = static_cast<int>(parse_int(v, ctx));
  }
  if (out.empty()) throw ConfigError(ctx + ": empty map");
  return out;
}

}  // namespace detail

// Key-value config file with [section] headers and '#' comments. Unknown
// keys are rejected with the offending line number.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto ctx = path + ":" + std::to_string(line_no);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r')) line.pop_back();
    std::size_t start = 0;
    while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
    line.erase(0, start);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(ctx + ": malformed section header");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(ctx + ": expected key = value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
    };
    trim(key);
    trim(value);
    if (key.empty() || value.empty()) throw ConfigError(ctx + ": expected key = value");

    const std::string qualified = section.empty() ? key : section + "." + key;
    if (qualified == "sim.num_lte") cfg.sim.num_lte = static_cast<int>(parse_int(value, ctx));
    else if (qualified == "sim.num_wifi") cfg.sim.num_wifi = static_cast<int>(parse_int(value, ctx));
    else if (qualified == "sim.difs_us") cfg.sim.difs_us = static_cast<int>(parse_int(value, ctx));
    else if (qualified == "sim.wifi_slot_us") cfg.sim.wifi_slot_us = static_cast<int>(parse_int(value, ctx));
    else if (qualified == "sim.icca_us") cfg.sim.icca_us = static_cast<int>(parse_int(value, ctx));
    else if (qualified == "sim.ecca_slot_us") cfg.sim.ecca_slot_us = static_cast<int>(parse_int(value, ctx));
    else if (qualified == "sim.cw_set") {
      cfg.sim.cw_set.clear();
      for (double v : detail::parse_number_list(value, ctx)) cfg.sim.cw_set.push_back(static_cast<int>(v));
    } else if (qualified == "sim.lte_occupation_ms") {
      cfg.sim.lte_occupation_ms = detail::parse_int_map(value, ctx);
    } else if (qualified == "sim.wifi_packet_bytes") {
      cfg.sim.wifi_packet_bytes = static_cast<int>(parse_int(value, ctx));
    } else if (qualified == "sim.rate_mbps") {
      cfg.sim.rate_mbps = static_cast<int>(parse_int(value, ctx));
    } else if (qualified == "sim.sense_error_prob") {
      cfg.sim.sense_error_prob = parse_double(value, ctx);
    } else if (qualified == "sim.gamma") {
      cfg.sim.gamma = parse_double(value, ctx);
    } else if (qualified == "priors.c") {
      cfg.priors.c = parse_double(value, ctx);
    } else if (qualified == "priors.d") {
      cfg.priors.d = parse_double(value, ctx);
    } else if (qualified == "priors.e") {
      cfg.priors.e = parse_double(value, ctx);
    } else if (qualified == "priors.f") {
      cfg.priors.f = parse_double(value, ctx);
    } else if (qualified == "priors.theta") {
      cfg.priors.theta = parse_double(value, ctx);
    } else if (qualified == "learning.episodes") {
      cfg.episodes = static_cast<int>(parse_int(value, ctx));
    } else if (qualified == "learning.horizon") {
      cfg.horizon = static_cast<int>(parse_int(value, ctx));
    } else if (qualified == "learning.max_outer_iters") {
      cfg.max_outer_iters = static_cast<int>(parse_int(value, ctx));
    } else if (qualified == "learning.max_cavi_sweeps") {
      cfg.max_cavi_sweeps = static_cast<int>(parse_int(value, ctx));
    } else if (qualified == "learning.elbo_tolerance") {
      cfg.elbo_tolerance = parse_double(value, ctx);
    } else if (qualified == "learning.epsilon_curve") {
      cfg.epsilon_curve = value;
    } else if (qualified == "learning.epsilon_start") {
      cfg.epsilon_start = parse_double(value, ctx);
    } else if (qualified == "learning.epsilon_end") {
      cfg.epsilon_end = parse_double(value, ctx);
    } else if (qualified == "learning.node_cap") {
      cfg.node_cap = static_cast<int>(parse_int(value, ctx));
    } else if (qualified == "learning.prune_threshold") {
      cfg.prune_threshold = parse_double(value, ctx);
    } else if (qualified == "learning.obs_bin_edges") {
      cfg.obs_bin_edges = detail::parse_number_list(value, ctx);
    } else if (qualified == "run.seed") {
      cfg.seed = static_cast<std::uint64_t>(parse_int(value, ctx));
      cfg.seed_set = true;
    } else if (qualified == "run.out") {
      cfg.out_dir = value;
    } else if (qualified == "run.workers") {
      cfg.workers = static_cast<int>(parse_int(value, ctx));
    } else {
      throw ConfigError(ctx + ": unknown key '" + qualified + "'");
    }
  }
  return cfg;
}

namespace detail {

inline std::string trajectory_file_name(int iteration) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "trajectories_iter%03d.txt", iteration);
  return buf;
}

}  // namespace detail

// elbo.csv:  iteration,elbo,sweeps,converged
// nodes.csv: iteration,nodes_agent0,...
// value.csv: iteration,value,jain
// gh.csv:    iteration,g_agent0,h_agent0,...
inline void write_trace_csvs(const std::string& dir, const ElboTrace& trace, int num_agents) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + name + " under " + dir);
    return out;
  };
  {
    auto out = open("elbo.csv");
    out << "iteration,elbo,sweeps,converged\n";
    for (const auto& r : trace) {
      out << r.iteration << ',' << fmt_double(r.elbo) << ',' << r.sweeps << ','
          << (r.converged ? 1 : 0) << '\n';
    }
  }
  {
    auto out = open("nodes.csv");
    out << "iteration";
    for (int n = 0; n < num_agents; ++n) out << ",nodes_agent" << n;
    out << '\n';
    for (const auto& r : trace) {
      out << r.iteration;
      for (int v : r.node_counts) out << ',' << v;
      out << '\n';
    }
  }
  {
    auto out = open("value.csv");
    out << "iteration,value,jain\n";
    for (const auto& r : trace) {
      out << r.iteration << ',' << fmt_double(r.value) << ',' << fmt_double(r.jain) << '\n';
    }
  }
  {
    auto out = open("gh.csv");
    out << "iteration";
    for (int n = 0; n < num_agents; ++n) out << ",g_agent" << n << ",h_agent" << n;
    out << '\n';
    for (const auto& r : trace) {
      out << r.iteration;
      for (int n = 0; n < num_agents; ++n) {
        out << ',' << fmt_double(r.g[static_cast<std::size_t>(n)]) << ','
            << fmt_double(r.h[static_cast<std::size_t>(n)]);
      }
      out << '\n';
    }
  }
}

// Serialized posterior parameters, one block per array, same conventions as
// the controller format.
inline void write_variational_state(const std::string& path, const VariationalState& vs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open state file for writing: " + path);
  out << "# laacoex variational state v1\n";
  out << "dims " << vs.num_nodes << ' ' << vs.num_actions << ' ' << vs.num_obs << '\n';
  auto emit = [&](const char* name, std::span<const double> v) {
    out << name;
    for (double x : v) out << ' ' << fmt_double(x);
    out << '\n';
  };
  emit("delta", vs.delta);
  emit("mu", vs.mu);
  emit("phi", vs.phi);
  emit("sigma", vs.sigma);
  emit("lambda", vs.lambda);
  out << "gh " << fmt_double(vs.g) << ' ' << fmt_double(vs.h) << '\n';
  emit("a", vs.a_shape);
  emit("b", vs.b_rate);
  if (!out) throw ConfigError("failed while writing state file: " + path);
}

struct EvaluateReport {
  double discounted_value = 0.0;  // mean over episodes of sum gamma^t r_t
  std::vector<double> mean_throughput_mbps;  // per agent
  double jain = 0.0;
};

// Fresh greedy episodes under loaded controllers (no exploration mixing).
inline EvaluateReport evaluate_policies(const ExperimentConfig& cfg,
                                        const std::vector<FscPolicy>& policies,
                                        std::vector<Trajectory>* episodes_out = nullptr) {
  std::vector<BehaviorPolicy> behavior;
  behavior.reserve(policies.size());
  for (const auto& p : policies) {
    if (p.num_actions != static_cast<int>(cfg.sim.cw_set.size()) ||
        p.num_obs != num_observation_bins(cfg.obs_bin_edges)) {
      throw ConfigError("evaluate: policy dimensions do not match the configured action/observation sets");
    }
    behavior.push_back(BehaviorPolicy{p, 0.0});
  }
  auto episodes = collect_trajectories(cfg.sim, behavior, cfg.episodes, cfg.horizon,
                                       cfg.obs_bin_edges, cfg.seed, /*stream_salt=*/0xE7A1u,
                                       cfg.workers);
  EvaluateReport rep;
  const int n = cfg.sim.num_agents();
  rep.mean_throughput_mbps.assign(static_cast<std::size_t>(n), 0.0);
  std::size_t steps = 0;
  for (const Trajectory& ep : episodes) {
    double discounted = 0.0;
    double g = 1.0;
    for (double r : ep.rewards) {
      discounted += g * r;
      g *= cfg.sim.gamma;
    }
    rep.discounted_value += discounted;
    for (const auto& results : ep.step_results) {
      for (int i = 0; i < n; ++i) {
        const auto& r = results[static_cast<std::size_t>(i)];
        rep.mean_throughput_mbps[static_cast<std::size_t>(i)] +=
            static_cast<double>(r.effective_payload_bits) / static_cast<double>(r.total_duration_us());
      }
      ++steps;
    }
  }
  rep.discounted_value /= static_cast<double>(episodes.size());
  std::vector<double> x(static_cast<std::size_t>(n));
  const double share = fair_share(cfg.sim.rate_mbps, n);
  for (int i = 0; i < n; ++i) {
    rep.mean_throughput_mbps[static_cast<std::size_t>(i)] /= static_cast<double>(steps);
    x[static_cast<std::size_t>(i)] = rep.mean_throughput_mbps[static_cast<std::size_t>(i)] / share;
  }
  const double x_last = x.back();
  x.pop_back();
  rep.jain = jain_index(x, x_last);
  if (episodes_out) *episodes_out = std::move(episodes);
  return rep;
}

// simulate: one batch under uniform behavior, persisted as trajectories.txt.
inline void run_simulate(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const int num_actions = static_cast<int>(cfg.sim.cw_set.size());
  const int num_obs = num_observation_bins(cfg.obs_bin_edges);
  std::vector<BehaviorPolicy> behavior(static_cast<std::size_t>(cfg.sim.num_agents()));
  for (auto& b : behavior) {
    b.base = uniform_fsc(num_actions, num_obs);
    b.epsilon = 0.0;
  }
  auto episodes = collect_trajectories(cfg.sim, behavior, cfg.episodes, cfg.horizon,
                                       cfg.obs_bin_edges, cfg.seed, /*stream_salt=*/0, cfg.workers);
  write_trajectories((fs::path(cfg.out_dir) / "trajectories.txt").string(), episodes);
}

// learn: batches, trace CSVs, and serialized policies/states under out_dir.
inline LearnResult run_learn(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  auto result = learn(cfg.learn_options(), [&](int iter, const std::vector<Trajectory>& batch) {
    write_trajectories((fs::path(cfg.out_dir) / detail::trajectory_file_name(iter)).string(), batch);
  });
  write_trace_csvs(cfg.out_dir, result.trace, cfg.sim.num_agents());
  for (std::size_t n = 0; n < result.policies.size(); ++n) {
    write_fsc((fs::path(cfg.out_dir) / ("policy_agent" + std::to_string(n) + ".fsc")).string(),
              result.policies[n]);
    write_variational_state(
        (fs::path(cfg.out_dir) / ("state_agent" + std::to_string(n) + ".txt")).string(),
        result.states[n]);
  }
  return result;
}

inline EvaluateReport run_evaluate(const ExperimentConfig& cfg, std::ostream& os) {
  namespace fs = std::filesystem;
  cfg.validate();
  std::vector<FscPolicy> policies;
  for (int n = 0; n < cfg.sim.num_agents(); ++n) {
    const auto path = fs::path(cfg.out_dir) / ("policy_agent" + std::to_string(n) + ".fsc");
    if (!fs::exists(path)) {
      throw ConfigError("evaluate: missing policy file " + path.string());
    }
    policies.push_back(read_fsc(path.string()));
  }
  const EvaluateReport rep = evaluate_policies(cfg, policies);
  os << "discounted value: " << fmt_short(rep.discounted_value) << '\n';
  for (std::size_t n = 0; n < rep.mean_throughput_mbps.size(); ++n) {
    os << "agent " << n << " mean throughput (Mbps): " << fmt_short(rep.mean_throughput_mbps[n])
       << '\n';
  }
  os << "jain index: " << fmt_short(rep.jain) << '\n';
  return rep;
}

// summarize: final row of each trace CSV, with parse errors naming the file
// and row.
inline void summarize(const std::string& dir, std::ostream& os) {
  namespace fs = std::filesystem;
  const char* names[] = {"elbo.csv", "nodes.csv", "value.csv", "gh.csv"};
  std::string missing;
  for (const char* name : names) {
    if (!fs::exists(fs::path(dir) / name)) missing += missing.empty() ? name : std::string(", ") + name;
  }
  if (!missing.empty()) throw ConfigError("summarize: missing files under " + dir + ": " + missing);

  auto read_csv = [&](const std::string& name) {
    std::ifstream in(fs::path(dir) / name);
    std::vector<std::vector<double>> rows;
    std::string line;
    int line_no = 0;
    std::getline(in, line);  // header
    ++line_no;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        row.push_back(parse_double(cell, name + " row " + std::to_string(line_no)));
      }
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ConfigError("summarize: " + name + " has no data rows");
    return rows;
  };

  const auto elbo = read_csv("elbo.csv");
  const auto nodes = read_csv("nodes.csv");
  const auto value = read_csv("value.csv");
  const auto gh = read_csv("gh.csv");

  os << "iterations: " << elbo.size() << '\n';
  os << "final ELBO: " << fmt_short(elbo.back()[1]) << '\n';
  os << "final discounted value: " << fmt_short(value.back()[1]) << '\n';
  os << "final Jain index: " << fmt_short(value.back()[2]) << '\n';
  bool all_one = true;
  os << "final node counts:";
  for (std::size_t n = 1; n < nodes.back().size(); ++n) {
    os << ' ' << static_cast<int>(nodes.back()[n]);
    if (nodes.back()[n] > 1.0) all_one = false;
  }
  os << '\n';
  os << "one-state controllers reached: " << (all_one ? "yes" : "no") << '\n';
  os << "final (g,h):";
  for (std::size_t n = 1; n + 1 < gh.back().size(); n += 2) {
    os << " (" << fmt_short(gh.back()[n]) << ", " << fmt_short(gh.back()[n + 1]) << ')';
  }
  os << '\n';
}

}  // namespace laacoex
