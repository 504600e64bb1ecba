// Acceptance suite: one pass/fail line per criterion. Criteria 1-3 share a
// full desk-scale learning run; the rest are randomized property checks and
// a determinism audit. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "enum_oracle.hpp"
#include "laacoex/experiment.hpp"

namespace fs = std::filesystem;
using laacoex::PointEstimatePolicy;
using laacoex::PriorHyperparams;
using laacoex::Rng;
using laacoex::Trajectory;
using laacoex::VariationalState;

namespace {

struct CheckFailure {
  std::string message;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw CheckFailure{message};
}

struct SharedRun {
  laacoex::ExperimentConfig cfg;
  laacoex::LearnResult result;
  double elapsed_seconds = 0.0;
};

SharedRun run_desk_scale() {
  SharedRun shared;
  auto& cfg = shared.cfg;
  cfg.seed = 1;
  cfg.seed_set = true;
  // Everything else is the shipped default: 2 LTE + 2 Wi-Fi, K=200, T=50,
  // gamma=0.9, c=e=0.1, d=f=100, p_e=0, 50 outer iterations.
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  shared.result = laacoex::learn(cfg.learn_options());
  shared.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return shared;
}

double variance(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return var / static_cast<double>(xs.size());
}

std::vector<Trajectory> random_batch(int episodes, int horizon, int num_agents, int num_actions,
                                     int num_obs, Rng& rng) {
  std::vector<Trajectory> out;
  for (int k = 0; k < episodes; ++k) {
    Trajectory ep;
    double cum = 0.0;
    for (int t = 0; t <= horizon; ++t) {
      std::vector<int> acts, obs;
      std::vector<double> probs;
      for (int n = 0; n < num_agents; ++n) {
        acts.push_back(static_cast<int>(rng.next_below(static_cast<std::uint32_t>(num_actions))));
        probs.push_back(0.05 + 0.9 * rng.next_double());
      }
      if (t > 0) {
        for (int n = 0; n < num_agents; ++n) {
          obs.push_back(static_cast<int>(rng.next_below(static_cast<std::uint32_t>(num_obs))));
        }
        ep.observations.push_back(std::move(obs));
      }
      cum += rng.next_double() * 3.0;
      ep.actions.push_back(std::move(acts));
      ep.behavior_probs.push_back(std::move(probs));
      ep.rewards.push_back(cum);
    }
    out.push_back(std::move(ep));
  }
  return out;
}

double batch_min_reward(const std::vector<Trajectory>& batch) {
  double r_min = batch[0].rewards[0];
  for (const auto& ep : batch) {
    for (double r : ep.rewards) r_min = std::min(r_min, r);
  }
  return r_min;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "missing file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- criteria -------------------------------------------------------------

void criterion_shrink(const SharedRun& shared) {
  require(!shared.result.trace.empty(), "learning run produced no trace");
  const auto& last = shared.result.trace.back();
  for (std::size_t n = 0; n < last.node_counts.size(); ++n) {
    require(last.node_counts[n] <= 2, "agent " + std::to_string(n) + " ended with |Z| = " +
                                          std::to_string(last.node_counts[n]) + " > 2");
  }
  require(shared.elapsed_seconds <= 600.0,
          "run took " + std::to_string(shared.elapsed_seconds) + " s (> 600 s)");
  std::cout << "      node counts:";
  for (int z : shared.result.trace.back().node_counts) std::cout << ' ' << z;
  std::cout << "; elapsed " << shared.elapsed_seconds << " s\n";
}

void criterion_elbo_convergence(const SharedRun& shared) {
  const auto& trace = shared.result.trace;
  std::vector<double> elbos;
  for (const auto& rec : trace) {
    require(rec.converged, "iteration " + std::to_string(rec.iteration) +
                               ": the 1e-5 stopping rule did not fire before the sweep cap");
    require(rec.sweeps < shared.cfg.max_cavi_sweeps,
            "iteration " + std::to_string(rec.iteration) + " hit the sweep cap");
    elbos.push_back(rec.elbo);
  }
  const std::size_t quartile = elbos.size() / 4;
  require(quartile >= 2, "trace too short for the quartile comparison");
  const std::vector<double> first(elbos.begin(), elbos.begin() + static_cast<std::ptrdiff_t>(quartile));
  const std::vector<double> last(elbos.end() - static_cast<std::ptrdiff_t>(quartile), elbos.end());
  require(variance(last) < variance(first),
          "last-quartile ELBO variance " + std::to_string(variance(last)) +
              " not below first-quartile " + std::to_string(variance(first)));
}

void criterion_gamma_posterior(const SharedRun& shared) {
  const double e = shared.cfg.priors.e;
  for (const auto& rec : shared.result.trace) {
    for (std::size_t n = 0; n < rec.g.size(); ++n) {
      require(rec.g[n] == e + rec.node_counts[n],
              "iteration " + std::to_string(rec.iteration) + ": g != e + |Z| for agent " +
                  std::to_string(n));
      require(rec.h[n] > 0.0, "iteration " + std::to_string(rec.iteration) + ": h <= 0");
    }
  }
}

void criterion_forward_backward_oracle() {
  Rng rng(0xFB01);
  for (int trial = 0; trial < 1000; ++trial) {
    const int z_count = 1 + static_cast<int>(rng.next_below(3));
    const int num_actions = 2 + static_cast<int>(rng.next_below(3));
    const int num_obs = 1 + static_cast<int>(rng.next_below(3));
    const auto p = laacoex_test::random_point(z_count, num_actions, num_obs, rng);
    const int t_max = static_cast<int>(rng.next_below(5));
    std::vector<int> actions, observations;
    for (int t = 0; t <= t_max; ++t) {
      actions.push_back(static_cast<int>(rng.next_below(static_cast<std::uint32_t>(num_actions))));
    }
    for (int t = 0; t < t_max; ++t) {
      observations.push_back(static_cast<int>(rng.next_below(static_cast<std::uint32_t>(num_obs))));
    }
    const auto want = laacoex_test::enumerate_marginals(p, actions, observations);
    const auto got = laacoex::smoothed_marginals(p, actions, observations, t_max);
    for (std::size_t i = 0; i < want.singleton.size(); ++i) {
      require(std::abs(got.singleton[i] - want.singleton[i]) < 1e-10,
              "singleton marginal mismatch at trial " + std::to_string(trial));
    }
    for (std::size_t i = 0; i < want.pairwise.size(); ++i) {
      require(std::abs(got.pairwise[i] - want.pairwise[i]) < 1e-10,
              "pairwise marginal mismatch at trial " + std::to_string(trial));
    }
  }
}

void criterion_history_factorization() {
  Rng rng(0xA101);
  for (int trial = 0; trial < 400; ++trial) {
    const int z_count = 1 + static_cast<int>(rng.next_below(3));
    const int num_actions = 2 + static_cast<int>(rng.next_below(3));
    const int num_obs = 1 + static_cast<int>(rng.next_below(3));
    // Random proper controller.
    laacoex::FscPolicy p;
    p.num_nodes = z_count;
    p.num_actions = num_actions;
    p.num_obs = num_obs;
    auto fill_rows = [&](std::vector<double>& v, std::size_t rows, std::size_t width) {
      v.resize(rows * width);
      for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < width; ++c) {
          v[r * width + c] = 0.05 + rng.next_double();
          sum += v[r * width + c];
        }
        for (std::size_t c = 0; c < width; ++c) v[r * width + c] /= sum;
      }
    };
    fill_rows(p.eta, 1, static_cast<std::size_t>(z_count));
    fill_rows(p.pi, static_cast<std::size_t>(z_count), static_cast<std::size_t>(num_actions));
    fill_rows(p.omega,
              static_cast<std::size_t>(num_actions) * static_cast<std::size_t>(num_obs) *
                  static_cast<std::size_t>(z_count),
              static_cast<std::size_t>(z_count));
    const int t_max = 1 + static_cast<int>(rng.next_below(4));
    std::vector<int> actions, observations;
    for (int t = 0; t <= t_max; ++t) {
      actions.push_back(static_cast<int>(rng.next_below(static_cast<std::uint32_t>(num_actions))));
    }
    for (int t = 0; t < t_max; ++t) {
      observations.push_back(static_cast<int>(rng.next_below(static_cast<std::uint32_t>(num_obs))));
    }
    double product = 1.0;
    double prev = 1.0;
    for (int t = 0; t <= t_max; ++t) {
      const std::vector<int> acts(actions.begin(), actions.begin() + t + 1);
      const std::vector<int> obs(observations.begin(), observations.begin() + t);
      const double lik = laacoex::history_likelihood(p, acts, obs);
      product *= lik / prev;
      prev = lik;
    }
    const double full = laacoex::history_likelihood(p, actions, observations);
    require(std::abs(product - full) < 1e-10,
            "telescoping product mismatch at trial " + std::to_string(trial));
  }
}

void criterion_nu_normalization() {
  Rng rng(0xB202);
  for (int trial = 0; trial < 200; ++trial) {
    const int num_agents = 1 + static_cast<int>(rng.next_below(3));
    const int z_count = 1 + static_cast<int>(rng.next_below(3));
    const auto batch = random_batch(2 + static_cast<int>(rng.next_below(5)),
                                    1 + static_cast<int>(rng.next_below(8)), num_agents, 4, 3, rng);
    std::vector<PointEstimatePolicy> points;
    for (int n = 0; n < num_agents; ++n) {
      points.push_back(laacoex_test::random_point(z_count, 4, 3, rng));
    }
    const auto nu = laacoex::nu_weights(points, batch, 0.9, batch_min_reward(batch));
    double total = 0.0;
    for (const auto& row : nu.w) {
      for (double w : row) total += w;
    }
    require(std::abs(total - 1.0) < 1e-8,
            "nu mass " + std::to_string(total) + " at trial " + std::to_string(trial));
  }
}

void criterion_reward_units() {
  // Jain bounds over 1e5 random throughput vectors.
  Rng rng(0xC303);
  for (int trial = 0; trial < 100000; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_below(7));
    std::vector<double> others;
    for (int i = 0; i < n - 1; ++i) others.push_back(rng.next_double() * 20.0);
    const double xn = rng.next_double() * 20.0;
    const double j = laacoex::jain_index(others, xn);
    require(j >= 1.0 / n - 1e-12 && j <= 1.0 + 1e-12, "Jain index out of [1/N, 1]");
  }
  laacoex::SimConfig cfg;
  for (int cw : cfg.cw_set) {
    require(laacoex::occupation_time_us(laacoex::AgentKind::WifiAp, cw, cfg) == 4000,
            "Wi-Fi transmission duration != 4000 us");
  }
  const std::map<int, int> want = {{15, 3}, {31, 6}, {63, 6}, {127, 8}, {255, 8}, {511, 10}, {1023, 10}};
  for (const auto& [cw, ms] : want) {
    require(laacoex::occupation_time_us(laacoex::AgentKind::LteEnb, cw, cfg) == ms * 1000,
            "LTE occupation mapping wrong for CW " + std::to_string(cw));
  }
  // Normalized rewards stay in [0,1] over random batches.
  for (int trial = 0; trial < 200; ++trial) {
    const auto batch = random_batch(3, 6, 2, 4, 3, rng);
    double lo = batch[0].rewards[0], hi = lo;
    for (const auto& ep : batch) {
      for (double r : ep.rewards) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
      }
    }
    for (const auto& ep : batch) {
      for (double r : ep.rewards) {
        const double norm = laacoex::normalized_reward(r, lo, hi);
        require(norm >= 0.0 && norm <= 1.0, "normalized reward outside [0,1]");
      }
    }
  }
}

void criterion_inner_ascent() {
  Rng rng(0xD404);
  PriorHyperparams priors;
  for (int trial = 0; trial < 40; ++trial) {
    const int num_agents = 1 + static_cast<int>(rng.next_below(2));
    const int z_count = 2 + static_cast<int>(rng.next_below(3));
    const auto batch = random_batch(4, 5, num_agents, 3, 2, rng);
    std::vector<VariationalState> states;
    std::vector<PointEstimatePolicy> points;
    for (int n = 0; n < num_agents; ++n) {
      states.push_back(laacoex_test::random_state(z_count, 3, 2, rng));
      points.push_back(laacoex::point_estimate(states.back()));
    }
    const auto stats = laacoex::accumulate_estep(batch, points, 0.9, batch_min_reward(batch));
    double prev = laacoex::elbo_given_stats(states, stats, priors).total();
    auto step = [&](const char* what, auto&& update) {
      update();
      const double cur = laacoex::elbo_given_stats(states, stats, priors).total();
      require(cur >= prev - 1e-8 * std::max(1.0, std::abs(prev)),
              std::string("ELBO decreased after ") + what + " update at trial " +
                  std::to_string(trial));
      prev = cur;
    };
    for (int n = 0; n < num_agents; ++n) {
      auto& vs = states[static_cast<std::size_t>(n)];
      const auto& st = stats.agents[static_cast<std::size_t>(n)];
      step("delta/mu", [&] { laacoex::coord::update_delta_mu(vs, st); });
      step("phi", [&] { laacoex::coord::update_phi(vs, st, priors); });
      step("sigma/lambda", [&] { laacoex::coord::update_sigma_lambda(vs, st); });
      step("g/h", [&] { laacoex::coord::update_g_h(vs, priors); });
      step("a/b", [&] { laacoex::coord::update_a_b(vs, priors); });
    }
  }
}

void criterion_determinism() {
  auto make_cfg = [](const std::string& out, int workers) {
    laacoex::ExperimentConfig cfg;
    cfg.seed = 99;
    cfg.seed_set = true;
    cfg.episodes = 12;
    cfg.horizon = 8;
    cfg.max_outer_iters = 3;
    cfg.node_cap = 5;
    cfg.out_dir = out;
    cfg.workers = workers;
    return cfg;
  };
  const auto base = fs::temp_directory_path() / "laacoex_acceptance_det";
  fs::remove_all(base);
  const auto dir1 = (base / "w1").string();
  const auto dir2 = (base / "w1_repeat").string();
  const auto dir4 = (base / "w4").string();
  laacoex::run_learn(make_cfg(dir1, 1));
  laacoex::run_learn(make_cfg(dir2, 1));
  laacoex::run_learn(make_cfg(dir4, 4));
  std::vector<std::string> names = {"elbo.csv", "nodes.csv", "value.csv", "gh.csv"};
  for (int iter = 0; iter < 3; ++iter) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "trajectories_iter%03d.txt", iter);
    names.emplace_back(buf);
  }
  for (std::size_t n = 0; n < 4; ++n) {
    names.push_back("policy_agent" + std::to_string(n) + ".fsc");
    names.push_back("state_agent" + std::to_string(n) + ".txt");
  }
  for (const auto& name : names) {
    const auto b1 = read_bytes(fs::path(dir1) / name);
    require(b1 == read_bytes(fs::path(dir2) / name), name + " differs across identical runs");
    require(b1 == read_bytes(fs::path(dir4) / name), name + " differs across worker counts");
  }
  fs::remove_all(base);
}

}  // namespace

int main() {
  int failures = 0;
  SharedRun shared;
  bool shared_ok = false;
  try {
    shared = run_desk_scale();
    shared_ok = true;
  } catch (const std::exception& e) {
    std::cout << "FAIL  0. desk-scale learning run crashed: " << e.what() << "\n";
    ++failures;
  }

  struct Criterion {
    const char* name;
    std::function<void()> fn;
    bool needs_shared;
  };
  const std::vector<Criterion> criteria = {
      {"1. shrink-to-one-state: all agents reach |Z| <= 2 within 50 iterations, <= 10 min",
       [&] { criterion_shrink(shared); }, true},
      {"2. ELBO convergence: 1e-5 rule fires before the sweep cap; late-quartile variance drops",
       [&] { criterion_elbo_convergence(shared); }, true},
      {"3. gamma posterior: g = e + |Z| exactly each iteration; h stays positive",
       [&] { criterion_gamma_posterior(shared); }, true},
      {"4. forward-backward equals path enumeration (1000 fixtures, 1e-10)",
       criterion_forward_backward_oracle, false},
      {"5. history factorization: prefix-ratio product equals the joint likelihood (1e-10)",
       criterion_history_factorization, false},
      {"6. nu reweighting mass sums to 1 (1e-8)", criterion_nu_normalization, false},
      {"7. reward-model units: Jain bounds, Wi-Fi 4000 us, LTE CW map, normalized rewards",
       criterion_reward_units, false},
      {"8. inner-CAVI ascent: no coordinate update decreases the frozen-q(z) ELBO (1e-8)",
       criterion_inner_ascent, false},
      {"9. determinism: byte-identical trajectories and CSVs across runs and worker counts",
       criterion_determinism, false},
  };

  for (const auto& crit : criteria) {
    if (crit.needs_shared && !shared_ok) {
      std::cout << "FAIL  " << crit.name << " (desk-scale run unavailable)\n";
      ++failures;
      continue;
    }
    try {
      crit.fn();
      std::cout << "PASS  " << crit.name << "\n";
    } catch (const CheckFailure& f) {
      std::cout << "FAIL  " << crit.name << " -- " << f.message << "\n";
      ++failures;
    } catch (const std::exception& e) {
      std::cout << "FAIL  " << crit.name << " -- unexpected error: " << e.what() << "\n";
      ++failures;
    }
  }
  return failures;
}
