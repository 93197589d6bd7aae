#pragma once

#include <cstdint>
#include <random>

namespace fsvos {

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

// Derives an independent stream from a base seed, e.g. one per worker or
// per clip. splitmix64 scrambling keeps nearby indices uncorrelated.
inline uint64_t derive_seed(uint64_t base, uint64_t index) {
  uint64_t z = base + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline int rand_int(Rng& rng, int lo, int hi_inclusive) {
  std::uniform_int_distribution<int> d(lo, hi_inclusive);
  return d(rng);
}

inline double rand_uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

inline double rand_normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  std::normal_distribution<double> d(mean, stddev);
  return d(rng);
}

}  // namespace fsvos
