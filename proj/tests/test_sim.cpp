#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <vector>

#include "laacoex/rng.hpp"
#include "laacoex/sim.hpp"
#include "slow_sim.hpp"

using laacoex::AgentKind;
using laacoex::ContentionResult;
using laacoex::Rng;
using laacoex::SimConfig;

TEST_CASE("occupation times follow the CW mapping") {
  SimConfig cfg;
  CHECK(laacoex::occupation_time_us(AgentKind::LteEnb, 15, cfg) == 3000);
  CHECK(laacoex::occupation_time_us(AgentKind::LteEnb, 31, cfg) == 6000);
  CHECK(laacoex::occupation_time_us(AgentKind::LteEnb, 63, cfg) == 6000);
  CHECK(laacoex::occupation_time_us(AgentKind::LteEnb, 127, cfg) == 8000);
  CHECK(laacoex::occupation_time_us(AgentKind::LteEnb, 255, cfg) == 8000);
  CHECK(laacoex::occupation_time_us(AgentKind::LteEnb, 511, cfg) == 10000);
  CHECK(laacoex::occupation_time_us(AgentKind::LteEnb, 1023, cfg) == 10000);
  for (int cw : cfg.cw_set) {
    CHECK(laacoex::occupation_time_us(AgentKind::WifiAp, cw, cfg) == 4000);
  }
  CHECK_THROWS_AS(laacoex::occupation_time_us(AgentKind::LteEnb, 16, cfg), laacoex::ConfigError);
}

TEST_CASE("back-off slot assessment") {
  SimConfig cfg;
  Rng rng(7);
  CHECK(laacoex::assess_backoff_slot(0, 0.0, rng) == laacoex::SlotJudgement::Idle);
  CHECK(laacoex::assess_backoff_slot(9, 0.0, rng) == laacoex::SlotJudgement::Busy);
  CHECK(laacoex::assess_backoff_slot(5, 0.0, rng) == laacoex::SlotJudgement::Idle);
  CHECK(laacoex::assess_backoff_slot(6, 0.0, rng) == laacoex::SlotJudgement::Busy);
  CHECK_THROWS_AS(laacoex::assess_backoff_slot(10, 0.0, rng), laacoex::ConfigError);
}

TEST_CASE("back-off slot idle probability matches binomial enumeration") {
  // Fully occupied slot, p_e = 0.5: idle needs >= 4 of 9 microseconds missed,
  // so P(idle) = sum_{j=4}^{9} C(9,j) / 2^9 = 382/512.
  const double expected = (126.0 + 126.0 + 84.0 + 36.0 + 9.0 + 1.0) / 512.0;
  Rng rng(12345);
  const int trials = 400000;
  int idle = 0;
  for (int i = 0; i < trials; ++i) {
    if (laacoex::assess_backoff_slot(9, 0.5, rng) == laacoex::SlotJudgement::Idle) ++idle;
  }
  const double freq = static_cast<double>(idle) / trials;
  // Deterministic seed; 5 sigma of the binomial sampling noise.
  CHECK(std::abs(freq - expected) < 5.0 * std::sqrt(expected * (1 - expected) / trials));
}

TEST_CASE("single Wi-Fi agent timeline") {
  SimConfig cfg;
  cfg.num_lte = 0;
  cfg.num_wifi = 1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng counter_rng = Rng::stream(99, seed);
    const int draw = counter_rng.next_int_inclusive(0, 15);
    Rng rng = Rng::stream(99, seed);
    const auto results = laacoex::run_contention_epoch(cfg, {AgentKind::WifiAp}, {15}, rng);
    REQUIRE(results.size() == 1);
    CHECK(results[0].wait_duration_us == 34 + 9 * draw);
    CHECK(results[0].tx_duration_us == 4000);
    CHECK(results[0].payload_bits == 120000);
    CHECK(results[0].effective_payload_bits == 120000);
    CHECK(results[0].total_duration_us() == results[0].wait_duration_us + 4000);
  }
}

TEST_CASE("simultaneous counter expiry collides both Wi-Fi packets") {
  SimConfig cfg;
  cfg.num_lte = 0;
  cfg.num_wifi = 2;
  // Find a seed where both agents draw the same counter; identical sensing
  // windows then force overlapping transmissions.
  for (std::uint64_t seed = 0;; ++seed) {
    Rng probe = Rng::stream(5, seed);
    const int b0 = probe.next_int_inclusive(0, 15);
    const int b1 = probe.next_int_inclusive(0, 15);
    if (b0 != b1) continue;
    Rng rng = Rng::stream(5, seed);
    const auto results =
        laacoex::run_contention_epoch(cfg, {AgentKind::WifiAp, AgentKind::WifiAp}, {15, 15}, rng);
    CHECK(results[0].wait_duration_us == results[1].wait_duration_us);
    CHECK(results[0].effective_payload_bits == 0);
    CHECK(results[1].effective_payload_bits == 0);
    break;
  }
}

TEST_CASE("LTE transmits first, Wi-Fi freezes and then sends collision-free") {
  // Hand-traced timeline: LTE (ICCA 43, counter 0) occupies [43, 3043).
  // Wi-Fi (DIFS 34, counter 5) decrements at slot [34,43), freezes through
  // the LTE burst, decrements again at [3040,3049) (3 occupied us <= 5), and
  // counts down to zero at the end of slot [3067,3076).
  SimConfig cfg;
  cfg.num_lte = 1;
  cfg.num_wifi = 1;
  for (std::uint64_t seed = 0;; ++seed) {
    Rng probe = Rng::stream(31, seed);
    const int lte_draw = probe.next_int_inclusive(0, 15);
    const int wifi_draw = probe.next_int_inclusive(0, 15);
    if (lte_draw != 0 || wifi_draw != 5) continue;
    Rng rng = Rng::stream(31, seed);
    const auto results =
        laacoex::run_contention_epoch(cfg, {AgentKind::LteEnb, AgentKind::WifiAp}, {15, 15}, rng);
    CHECK(results[0].wait_duration_us == 43);
    CHECK(results[0].effective_payload_bits == results[0].payload_bits);
    CHECK(results[1].wait_duration_us == 3076);
    CHECK(results[1].effective_payload_bits == 120000);
    CHECK((results[1].wait_duration_us - 34) % 9 == 0);
    break;
  }
}

TEST_CASE("epoch determinism: same seed gives identical results") {
  SimConfig cfg;
  cfg.sense_error_prob = 0.2;
  const auto kinds = cfg.roster();
  const std::vector<int> cws = {15, 127, 31, 1023};
  Rng r1 = Rng::stream(77, 3);
  Rng r2 = Rng::stream(77, 3);
  const auto a = laacoex::run_contention_epoch(cfg, kinds, cws, r1);
  const auto b = laacoex::run_contention_epoch(cfg, kinds, cws, r2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].wait_duration_us == b[i].wait_duration_us);
    CHECK(a[i].effective_payload_bits == b[i].effective_payload_bits);
  }
}

TEST_CASE("event-driven engine matches the microsecond-loop reference") {
  Rng meta(2024);
  for (int trial = 0; trial < 60; ++trial) {
    SimConfig cfg;
    cfg.num_lte = 1 + static_cast<int>(meta.next_below(3));
    cfg.num_wifi = static_cast<int>(meta.next_below(3));
    if (cfg.num_agents() == 0) cfg.num_wifi = 1;
    cfg.sense_error_prob = (trial % 3 == 0) ? 0.0 : 0.3 * meta.next_double();
    const auto kinds = cfg.roster();
    std::vector<int> cws;
    for (int i = 0; i < cfg.num_agents(); ++i) {
      cws.push_back(cfg.cw_set[meta.next_below(static_cast<std::uint32_t>(cfg.cw_set.size()))]);
    }
    const std::uint64_t seed = meta.next_u64();
    Rng fast_rng = Rng::stream(seed, 0);
    Rng slow_rng = Rng::stream(seed, 0);
    const auto fast = laacoex::run_contention_epoch(cfg, kinds, cws, fast_rng);
    const auto slow = laacoex_test::slow_contention_epoch(cfg, kinds, cws, slow_rng);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) {
      INFO("trial " << trial << " agent " << i << " p_e " << cfg.sense_error_prob);
      CHECK(fast[i].wait_duration_us == slow[i].wait_duration_us);
      CHECK(fast[i].tx_duration_us == slow[i].tx_duration_us);
      CHECK(fast[i].payload_bits == slow[i].payload_bits);
      CHECK(fast[i].effective_payload_bits == slow[i].effective_payload_bits);
    }
  }
}

TEST_CASE("all-or-nothing payload at the unit level") {
  Rng meta(5150);
  for (int trial = 0; trial < 40; ++trial) {
    SimConfig cfg;
    cfg.sense_error_prob = trial % 2 == 0 ? 0.0 : 0.25;
    const auto kinds = cfg.roster();
    std::vector<int> cws;
    for (int i = 0; i < cfg.num_agents(); ++i) {
      cws.push_back(cfg.cw_set[meta.next_below(3)]);  // small CWs force contention
    }
    Rng rng = Rng::stream(meta.next_u64(), 1);
    const auto results = laacoex::run_contention_epoch(cfg, kinds, cws, rng);
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      CHECK(r.wait_duration_us >=
            laacoex::initial_sense_us(kinds[i], cfg));
      CHECK(r.effective_payload_bits >= 0);
      CHECK(r.effective_payload_bits <= r.payload_bits);
      if (kinds[i] == AgentKind::WifiAp) {
        CHECK((r.effective_payload_bits == 0 || r.effective_payload_bits == r.payload_bits));
      } else {
        CHECK(r.effective_payload_bits % (laacoex::lte_subframe_us() * cfg.rate_mbps) == 0);
      }
    }
    // Occupancy never exceeds the agent count and never goes negative.
    std::int64_t horizon = 0;
    for (const auto& r : results) horizon = std::max(horizon, r.total_duration_us());
    for (std::int64_t us = 0; us < horizon; us += 97) {
      const auto s = laacoex::occupancy_at(results, us);
      CHECK(s.occupying_count >= 0);
      CHECK(s.occupying_count <= cfg.num_agents());
    }
  }
}

TEST_CASE("distinct expiry times with p_e = 0 mean no collisions") {
  SimConfig cfg;
  Rng meta(31337);
  for (int trial = 0; trial < 40; ++trial) {
    const auto kinds = cfg.roster();
    std::vector<int> cws;
    for (int i = 0; i < cfg.num_agents(); ++i) {
      cws.push_back(cfg.cw_set[meta.next_below(static_cast<std::uint32_t>(cfg.cw_set.size()))]);
    }
    Rng rng = Rng::stream(meta.next_u64(), 2);
    const auto results = laacoex::run_contention_epoch(cfg, kinds, cws, rng);
    // Agents whose transmissions overlap nobody must keep full payload.
    for (std::size_t i = 0; i < results.size(); ++i) {
      bool overlapped = false;
      const std::int64_t lo = results[i].wait_duration_us;
      const std::int64_t hi = results[i].total_duration_us();
      for (std::size_t j = 0; j < results.size(); ++j) {
        if (j == i) continue;
        if (std::max(results[j].wait_duration_us, lo) <
            std::min(results[j].total_duration_us(), hi)) {
          overlapped = true;
        }
      }
      if (!overlapped) {
        CHECK(results[i].effective_payload_bits == results[i].payload_bits);
      }
    }
  }
}

TEST_CASE("empty agent list is rejected") {
  SimConfig cfg;
  Rng rng(1);
  CHECK_THROWS_AS(laacoex::run_contention_epoch(cfg, {}, {}, rng), laacoex::ConfigError);
}
