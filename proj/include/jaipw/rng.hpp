#pragma once

#include <cstdint>

#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace jaipw {

// 64-bit Mersenne Twister; Boost's distributions are header-defined, so streams are portable.
using Rng = boost::random::mt19937_64;

// SplitMix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0) {
  return mix64(mix64(mix64(seed) ^ stream) ^ (substream * 0xD1B54A32D192ED03ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0) {
  return Rng(derive_seed(seed, stream, substream));
}

}  // namespace jaipw
