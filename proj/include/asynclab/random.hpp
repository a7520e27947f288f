#pragma once

#include <cstdint>
#include <random>

namespace asynclab {

using Engine = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a parent seed and two indices.
/// The result depends only on the arguments, never on call order.
constexpr std::uint64_t split_seed(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b = 0) {
  return seed ^ mix64(mix64(a + 0x632be59bd9b4e019ULL) ^ (b * 0x8cb92ba72f3d8dd7ULL + 1));
}

// Stream tags used by run_trajectory.
inline constexpr std::uint64_t kDataStream = 0;
inline constexpr std::uint64_t kDelayStream = 1;

}  // namespace asynclab
