#pragma once

// Seedable random streams with bit-stable output. std::uniform_*_distribution
// is implementation-defined, so sampling primitives are spelled out here.

#include <cstdint>
#include <span>
#include <vector>

namespace laacoex {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// xoshiro256++ seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  // Independent stream derived from a master seed and up to two stream ids
  // (e.g. outer iteration and episode index).
  static Rng stream(std::uint64_t master_seed, std::uint64_t id_a, std::uint64_t id_b = 0) {
    std::uint64_t sm = master_seed;
    std::uint64_t mix = splitmix64(sm);
    sm ^= (id_a + 0x9E3779B97F4A7C15ull) * 0xD1342543DE82EF95ull;
    mix ^= splitmix64(sm);
    sm ^= (id_b + 0x2545F4914F6CDD1Dull) * 0xDA942042E4DD58B5ull;
    mix ^= splitmix64(sm);
    return Rng(mix);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return next_double() < p; }

  // Unbiased uniform integer in [0, bound), bound >= 1 (rejection sampling).
  std::uint32_t next_below(std::uint32_t bound) {
    const std::uint64_t threshold = (0ull - bound) % bound;  // 2^64 mod bound
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return static_cast<std::uint32_t>(r % bound);
    }
  }

  // Uniform integer in [lo, hi] inclusive.
  int next_int_inclusive(int lo, int hi) {
    return lo + static_cast<int>(next_below(static_cast<std::uint32_t>(hi - lo + 1)));
  }

  // Sample an index from a normalized probability row by cumulative scan.
  // Floating-point residue falls into the last index.
  int sample_index(std::span<const double> probs) {
    const double u = next_double();
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      cum += probs[i];
      if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace laacoex
