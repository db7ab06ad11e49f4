#pragma once

#include <cstdint>
#include <random>

namespace blend {

using Rng = std::mt19937_64;

// Independent engine for (seed, stream, substream). Every Monte Carlo
// iteration and jackknife replicate draws from its own engine, so results do
// not depend on scheduling.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(substream),
                    static_cast<std::uint32_t>(substream >> 32), 0x5eedu};
  return Rng(seq);
}

inline double uniform01(Rng& rng) {
  // 53 random bits in [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

}  // namespace blend
