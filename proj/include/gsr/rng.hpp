#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gsr {

// splitmix64; used to derive independent seed streams from one run seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t p : parts) {
    h = splitmix64(h ^ p);
  }
  return h;
}

inline std::mt19937 make_engine(std::uint64_t seed) {
  const std::uint64_t h = splitmix64(seed);
  return std::mt19937(static_cast<std::uint32_t>(h ^ (h >> 32)));
}

}  // namespace gsr
