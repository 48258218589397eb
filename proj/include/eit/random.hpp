#pragma once

#include <cstdint>
#include <random>

namespace eit {

using Rng = std::mt19937_64;

/// Counter-based substream: the generator for (seed, stream, counter) depends
/// only on those three numbers, so a chain resumed at iteration k draws
/// exactly what an uninterrupted chain would have drawn.
inline Rng substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32)};
  return Rng(seq);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

}  // namespace eit
