#pragma once

#include <cstdint>
#include <random>

namespace pathprox {

// splitmix64 finalizer; used to derive independent, reproducible RNG streams
// from one experiment seed (init, shuffles, subsampling, power iteration, ...).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(mix_seed(seed, stream));
}

// Stream tags so unrelated consumers of the same seed never collide.
namespace rng_stream {
inline constexpr std::uint64_t kInit = 0x01;
inline constexpr std::uint64_t kSubsample = 0x02;
inline constexpr std::uint64_t kSplit = 0x03;
inline constexpr std::uint64_t kSynthetic = 0x04;
inline constexpr std::uint64_t kShuffleBase = 0x1000;  // + epoch
inline constexpr std::uint64_t kPowerIteration = 0x05;
}  // namespace rng_stream

}  // namespace pathprox
