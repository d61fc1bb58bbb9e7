#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <boost/random/uniform_int_distribution.hpp>

namespace amda {

// mt19937_64 output is fixed by the standard; distributions come from
// Boost.Random so draw sequences do not depend on the standard library vendor.
using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent stream seeds from a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return boost::random::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// Fisher-Yates over the Boost integer distribution (std::shuffle is vendor-specific).
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

namespace seed_stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t mixup = 3;
inline constexpr std::uint64_t ada_sample = 4;
inline constexpr std::uint64_t attack = 5;
}  // namespace seed_stream

}  // namespace amda
