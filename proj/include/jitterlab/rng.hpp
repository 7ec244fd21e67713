#pragma once

#include <cstdint>
#include <random>

namespace jitterlab {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Engine for one logical stream. Seeds are scrambled so that neighbouring
// raw seeds (seed ^ index) give unrelated streams.
inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(splitmix64(seed));
}

// Per-item seed for parallel-safe maps over a collection.
inline std::uint64_t item_seed(std::uint64_t seed, std::uint64_t index) { return seed ^ index; }

// Independent sub-stream for a named purpose (e.g. "init", "sampling").
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt));
}

// Uniform double in [0, 1) built from the top 53 bits; independent of the
// standard library's distribution implementation.
inline double uniform01(std::mt19937_64& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(eng);
}

}  // namespace jitterlab
