#pragma once

#include <cstdint>
#include <random>

namespace dernn {

// All randomness in the library flows through mt19937_64. A (seed, stream) pair
// selects an independent stream: the engine is seeded with a seed_seq built from
// the low/high halves of `seed` followed by `stream`.
using Rng = std::mt19937_64;

enum class Stream : std::uint32_t {
  kMask = 1,
  kShotNoise = 2,
  kParamInit = 3,
  kPhantom = 4,
  kTest = 5,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

// Uniform in [0, 1) from the top 53 bits; portable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

}  // namespace dernn
