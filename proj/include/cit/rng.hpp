#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cit::rng {

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for stream (label, index) under a master seed. Streams with different
// labels or indices are decorrelated by the mixing, so replicate i gets the
// same numbers no matter which thread runs it.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                                           std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(seed ^ fnv1a(label));
  return splitmix64(s + splitmix64(index + 0x632be59bd9b4e019ULL));
}

using Engine = std::mt19937_64;

inline Engine stream(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
  return Engine(derive_seed(seed, label, index));
}

}  // namespace cit::rng
