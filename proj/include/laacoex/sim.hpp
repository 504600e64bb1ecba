#pragma once

// Single-channel listen-before-talk contention at 1 us resolution. One epoch:
// every agent senses (DIFS or ICCA), backs off a random number of slots, and
// transmits exactly once; overlapping transmissions collide per packet or
// LTE sub-frame.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "laacoex/errors.hpp"
#include "laacoex/rng.hpp"

namespace laacoex {

enum class AgentKind { LteEnb, WifiAp };

inline const char* to_string(AgentKind k) { return k == AgentKind::LteEnb ? "lte" : "wifi"; }

struct SimConfig {
  int num_lte = 2;
  int num_wifi = 2;
  int difs_us = 34;
  int wifi_slot_us = 9;
  int icca_us = 43;
  int ecca_slot_us = 9;
  std::vector<int> cw_set = {15, 31, 63, 127, 255, 511, 1023};
  std::map<int, int> lte_occupation_ms = {{15, 3},  {31, 6},   {63, 6},  {127, 8},
                                          {255, 8}, {511, 10}, {1023, 10}};
  int wifi_packet_bytes = 15000;
  int rate_mbps = 30;  // also bits per us
  double sense_error_prob = 0.0;
  double gamma = 0.9;

  int num_agents() const { return num_lte + num_wifi; }

  // LTE agents first, then Wi-Fi; an agent's index in this roster is its
  // Dec-POMDP index n.
  std::vector<AgentKind> roster() const {
    std::vector<AgentKind> kinds;
    kinds.insert(kinds.end(), static_cast<std::size_t>(num_lte), AgentKind::LteEnb);
    kinds.insert(kinds.end(), static_cast<std::size_t>(num_wifi), AgentKind::WifiAp);
    return kinds;
  }

  void validate() const {
    if (num_lte < 0 || num_wifi < 0 || num_agents() < 1) {
      throw ConfigError("sim: need at least one agent");
    }
    if (difs_us <= 0 || wifi_slot_us <= 0 || icca_us <= 0 || ecca_slot_us <= 0 ||
        wifi_packet_bytes <= 0 || rate_mbps <= 0) {
      throw ConfigError("sim: durations and rates must be positive integers");
    }
    if (cw_set.empty()) throw ConfigError("sim: cw_set must not be empty");
    for (std::size_t i = 1; i < cw_set.size(); ++i) {
      if (cw_set[i] <= cw_set[i - 1]) throw ConfigError("sim: cw_set must be strictly increasing");
    }
    for (int cw : cw_set) {
      auto it = lte_occupation_ms.find(cw);
      if (it == lte_occupation_ms.end()) {
        throw ConfigError("sim: lte_occupation_ms has no entry for CW " + std::to_string(cw));
      }
      if (it->second <= 0) throw ConfigError("sim: LTE occupation times must be positive");
    }
    if (!(sense_error_prob >= 0.0 && sense_error_prob < 1.0)) {
      throw ConfigError("sim: sense_error_prob must lie in [0,1)");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("sim: gamma must lie in [0,1)");
  }
};

struct ContentionResult {
  std::int64_t wait_duration_us = 0;  // initial-sensing start to back-off end
  std::int64_t tx_duration_us = 0;
  std::int64_t payload_bits = 0;
  std::int64_t effective_payload_bits = 0;  // bits in units untouched by collisions

  std::int64_t total_duration_us() const { return wait_duration_us + tx_duration_us; }
};

// Spectrum configuration visible to the simulator only: how many agents
// occupy the channel at one instant.
struct GlobalState {
  int occupying_count = 0;
};

inline int initial_sense_us(AgentKind kind, const SimConfig& cfg) {
  return kind == AgentKind::LteEnb ? cfg.icca_us : cfg.difs_us;
}

inline int backoff_slot_us(AgentKind kind, const SimConfig& cfg) {
  return kind == AgentKind::LteEnb ? cfg.ecca_slot_us : cfg.wifi_slot_us;
}

// A back-off slot reads as clear when at most this many of its microseconds
// are judged occupied.
inline constexpr int kSlotOccupiedClearMax = 5;

inline std::int64_t lte_subframe_us() { return 1000; }

// Channel occupation once the back-off counter expires. LTE maps the chosen
// contention window to a sub-frame budget; Wi-Fi always sends one packet.
inline std::int64_t occupation_time_us(AgentKind kind, int cw, const SimConfig& cfg) {
  if (std::find(cfg.cw_set.begin(), cfg.cw_set.end(), cw) == cfg.cw_set.end()) {
    throw ConfigError("occupation_time: CW " + std::to_string(cw) + " is not in cw_set");
  }
  if (kind == AgentKind::LteEnb) {
    return static_cast<std::int64_t>(cfg.lte_occupation_ms.at(cw)) * 1000;
  }
  const std::int64_t bits = static_cast<std::int64_t>(cfg.wifi_packet_bytes) * 8;
  return (bits + cfg.rate_mbps / 2) / cfg.rate_mbps;
}

enum class SlotJudgement { Idle, Busy };

// One back-off sensing slot: each truly occupied microsecond is missed
// independently with probability p_e; the slot is clear when at most
// kSlotOccupiedClearMax microseconds remain judged occupied.
inline SlotJudgement assess_backoff_slot(int occupied_us_within_slot, double sense_error_prob,
                                         Rng& rng, int slot_us = 9) {
  if (occupied_us_within_slot < 0 || occupied_us_within_slot > slot_us) {
    throw ConfigError("assess_backoff_slot: occupied count outside [0, slot]");
  }
  int judged = 0;
  for (int i = 0; i < occupied_us_within_slot; ++i) {
    if (!rng.bernoulli(sense_error_prob)) ++judged;
  }
  return judged <= kSlotOccupiedClearMax ? SlotJudgement::Idle : SlotJudgement::Busy;
}

namespace detail {

enum class Phase { InitialSense, Backoff, Transmit, Done };

struct EpochAgent {
  AgentKind kind;
  int sense_window = 0;
  int slot_us = 9;
  Phase phase = Phase::InitialSense;
  int sense_progress = 0;  // consecutive us judged idle
  int counter = 0;         // back-off slots still to elapse
  int slot_progress = 0;   // us consumed in the current slot
  int slot_occupied = 0;   // us judged occupied in the current slot
  std::int64_t occupation = 0;
  std::int64_t tx_start = -1;
  std::int64_t tx_end = -1;

  bool sensing() const { return phase == Phase::InitialSense || phase == Phase::Backoff; }

  void begin_transmission(std::int64_t at) {
    phase = Phase::Transmit;
    tx_start = at;
    tx_end = at + occupation;
  }

  // Idle us until this agent's transmission starts, assuming the channel
  // stays judged idle throughout.
  std::int64_t idle_us_to_tx() const {
    if (phase == Phase::InitialSense) {
      return (sense_window - sense_progress) +
             static_cast<std::int64_t>(counter) * slot_us;
    }
    // Backoff: finish the current slot (if one is underway), then whole slots.
    if (slot_progress == 0) return static_cast<std::int64_t>(counter) * slot_us;
    const std::int64_t finish = slot_us - slot_progress;
    const int after = counter - (slot_occupied <= kSlotOccupiedClearMax ? 1 : 0);
    return finish + static_cast<std::int64_t>(after) * slot_us;
  }

  // Advance exactly `us` judged-idle microseconds; `us` must not exceed
  // idle_us_to_tx(). Returns true when the counter expires at the end.
  bool advance_idle(std::int64_t us) {
    if (phase == Phase::InitialSense) {
      const std::int64_t need = sense_window - sense_progress;
      if (us < need) {
        sense_progress += static_cast<int>(us);
        return false;
      }
      us -= need;
      phase = Phase::Backoff;
      sense_progress = sense_window;
      slot_progress = 0;
      slot_occupied = 0;
      if (counter == 0) return us == 0;  // transmit straight after sensing
    }
    if (slot_progress > 0) {
      const std::int64_t finish = slot_us - slot_progress;
      if (us < finish) {
        slot_progress += static_cast<int>(us);
        return false;
      }
      us -= finish;
      if (slot_occupied <= kSlotOccupiedClearMax) --counter;
      slot_progress = 0;
      slot_occupied = 0;
      if (counter == 0) return us == 0;
    }
    counter -= static_cast<int>(us / slot_us);
    slot_progress = static_cast<int>(us % slot_us);
    return counter == 0 && slot_progress == 0;
  }

  // One judged microsecond; returns true when the counter expires at the end
  // of this microsecond (transmission starts at the next one).
  bool advance_one_us(bool judged_occupied) {
    if (phase == Phase::InitialSense) {
      sense_progress = judged_occupied ? 0 : sense_progress + 1;
      if (sense_progress < sense_window) return false;
      phase = Phase::Backoff;
      slot_progress = 0;
      slot_occupied = 0;
      return counter == 0;
    }
    ++slot_progress;
    if (judged_occupied) ++slot_occupied;
    if (slot_progress < slot_us) return false;
    if (slot_occupied <= kSlotOccupiedClearMax) --counter;
    slot_progress = 0;
    slot_occupied = 0;
    return counter == 0;
  }
};

}  // namespace detail

// One synchronized contention epoch. All agents begin initial sensing at the
// same instant; the epoch closes when each has transmitted once. The timeline
// is exact at 1 us resolution; idle stretches and, for p_e == 0, busy
// stretches are advanced analytically. Sensing-error draws are consumed in a
// fixed order (microsecond, then sensing agent, then occupant, all ascending)
// so results depend only on the seed.
inline std::vector<ContentionResult> run_contention_epoch(const SimConfig& cfg,
                                                          const std::vector<AgentKind>& kinds,
                                                          const std::vector<int>& cw_choices,
                                                          Rng& rng) {
  const int n = static_cast<int>(kinds.size());
  if (n == 0) throw ConfigError("run_contention_epoch: empty agent list");
  if (cw_choices.size() != kinds.size()) {
    throw ConfigError("run_contention_epoch: one CW choice per agent required");
  }

  std::vector<detail::EpochAgent> agents(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& a = agents[static_cast<std::size_t>(i)];
    a.kind = kinds[static_cast<std::size_t>(i)];
    a.sense_window = initial_sense_us(a.kind, cfg);
    a.slot_us = backoff_slot_us(a.kind, cfg);
    a.occupation = occupation_time_us(a.kind, cw_choices[static_cast<std::size_t>(i)], cfg);
  }
  // Back-off counters are drawn up front in agent order.
  for (int i = 0; i < n; ++i) {
    agents[static_cast<std::size_t>(i)].counter =
        rng.next_int_inclusive(0, cw_choices[static_cast<std::size_t>(i)]);
  }

  const double pe = cfg.sense_error_prob;
  std::int64_t now = 0;
  std::vector<int> occupants;

  auto collect_occupants = [&] {
    occupants.clear();
    for (int i = 0; i < n; ++i) {
      auto& a = agents[static_cast<std::size_t>(i)];
      if (a.phase == detail::Phase::Transmit && a.tx_end <= now) a.phase = detail::Phase::Done;
      if (a.phase == detail::Phase::Transmit) occupants.push_back(i);
    }
  };

  auto all_done = [&] {
    for (const auto& a : agents)
      if (a.phase != detail::Phase::Done) return false;
    return true;
  };

  while (true) {
    collect_occupants();
    if (all_done()) break;

    if (occupants.empty()) {
      // Channel idle: no sensing-error draws are possible, so jump to the
      // earliest transmission start.
      std::int64_t step = -1;
      for (const auto& a : agents) {
        if (!a.sensing()) continue;
        const std::int64_t t = a.idle_us_to_tx();
        if (step < 0 || t < step) step = t;
      }
      for (auto& a : agents) {
        if (!a.sensing()) continue;
        if (a.advance_idle(step)) a.begin_transmission(now + step);
      }
      now += step;
      continue;
    }

    if (pe == 0.0) {
      // Every microsecond of the busy stretch is judged occupied; the only
      // events are back-off slot boundaries and the end of the stretch.
      std::int64_t busy_end = 0;
      for (int i : occupants) {
        busy_end = std::max(busy_end, agents[static_cast<std::size_t>(i)].tx_end);
      }
      while (now < busy_end) {
        std::int64_t next = busy_end;
        for (const auto& a : agents) {
          if (a.phase != detail::Phase::Backoff) continue;
          next = std::min(next, now + (a.slot_us - a.slot_progress));
        }
        const std::int64_t step = next - now;
        for (auto& a : agents) {
          if (a.phase == detail::Phase::InitialSense) {
            a.sense_progress = 0;
          } else if (a.phase == detail::Phase::Backoff) {
            a.slot_progress += static_cast<int>(step);
            a.slot_occupied += static_cast<int>(step);
            if (a.slot_progress == a.slot_us) {
              if (a.slot_occupied <= kSlotOccupiedClearMax && --a.counter == 0) {
                a.begin_transmission(next);
                busy_end = std::max(busy_end, a.tx_end);
              }
              a.slot_progress = 0;
              a.slot_occupied = 0;
            }
          }
        }
        now = next;
      }
      continue;
    }

    // Busy channel with sensing errors: step one microsecond, drawing one
    // miss per (sensing agent, occupant) pair.
    for (int i = 0; i < n; ++i) {
      auto& a = agents[static_cast<std::size_t>(i)];
      if (!a.sensing()) continue;
      bool judged = false;
      for (std::size_t j = 0; j < occupants.size(); ++j) {
        if (!rng.bernoulli(pe)) judged = true;
      }
      if (a.advance_one_us(judged)) a.begin_transmission(now + 1);
    }
    now += 1;
  }

  // Collision accounting is geometric: a Wi-Fi packet or LTE sub-frame is
  // lost when any other transmission overlaps it.
  std::vector<ContentionResult> results(static_cast<std::size_t>(n));
  auto overlaps_other = [&](int self, std::int64_t lo, std::int64_t hi) {
    for (int j = 0; j < n; ++j) {
      if (j == self) continue;
      const auto& b = agents[static_cast<std::size_t>(j)];
      if (std::max(b.tx_start, lo) < std::min(b.tx_end, hi)) return true;
    }
    return false;
  };
  for (int i = 0; i < n; ++i) {
    const auto& a = agents[static_cast<std::size_t>(i)];
    auto& r = results[static_cast<std::size_t>(i)];
    r.wait_duration_us = a.tx_start;
    r.tx_duration_us = a.occupation;
    if (a.kind == AgentKind::WifiAp) {
      r.payload_bits = static_cast<std::int64_t>(cfg.wifi_packet_bytes) * 8;
      r.effective_payload_bits = overlaps_other(i, a.tx_start, a.tx_end) ? 0 : r.payload_bits;
    } else {
      const std::int64_t sub_us = lte_subframe_us();
      const std::int64_t bits_per_sub = sub_us * cfg.rate_mbps;
      for (std::int64_t s = a.tx_start; s < a.tx_end; s += sub_us) {
        r.payload_bits += bits_per_sub;
        if (!overlaps_other(i, s, s + sub_us)) r.effective_payload_bits += bits_per_sub;
      }
    }
  }
  return results;
}

// Channel occupancy implied by a set of epoch results at one instant.
inline GlobalState occupancy_at(const std::vector<ContentionResult>& results, std::int64_t us) {
  GlobalState s;
  for (const auto& r : results) {
    if (us >= r.wait_duration_us && us < r.total_duration_us()) ++s.occupying_count;
  }
  return s;
}

}  // namespace laacoex
