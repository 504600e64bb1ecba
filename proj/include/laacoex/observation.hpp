#pragma once

// Wait durations are binned into a small observation alphabet so the FSC
// transition table stays finite. Bin i covers [edges[i], edges[i+1]); the
// last edge opens an unbounded overflow bin.

#include <cstdint>
#include <span>
#include <vector>

#include "laacoex/errors.hpp"

namespace laacoex {

// Eight log-spaced bins across [0, 20 ms) plus overflow.
inline std::vector<double> default_observation_bin_edges() {
  return {0.0, 100.0, 213.0, 454.0, 969.0, 2065.0, 4401.0, 9382.0, 20000.0};
}

inline void validate_bin_edges(std::span<const double> edges) {
  if (edges.empty() || edges[0] != 0.0) {
    throw ConfigError("observation bin edges must start at 0");
  }
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) {
      throw ConfigError("observation bin edges must be strictly increasing");
    }
  }
}

inline int num_observation_bins(std::span<const double> edges) {
  return static_cast<int>(edges.size());
}

inline int bin_observation(std::int64_t wait_us, std::span<const double> edges) {
  int lo = 0;
  int hi = static_cast<int>(edges.size()) - 1;
  // Largest edge index with edges[i] <= wait_us.
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (static_cast<double>(wait_us) >= edges[static_cast<std::size_t>(mid)]) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

}  // namespace laacoex
