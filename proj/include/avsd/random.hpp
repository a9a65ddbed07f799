#pragma once

#include <cstdint>
#include <initializer_list>

namespace avsd {

/// splitmix64 finalizer; mixes a base seed with stream identifiers so that
/// per-example random streams stay independent of scheduling.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <typename... Ids>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Ids... ids) {
  std::uint64_t s = mix_seed(seed);
  ((s = mix_seed(s ^ static_cast<std::uint64_t>(ids))), ...);
  return s;
}

}  // namespace avsd
