#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace vdist {

/// SplitMix64 generator. Cheap to seed, so every (seed, s, a) triple can own
/// an independent stream without the setup cost of a Mersenne twister.
/// Satisfies UniformRandomBitGenerator and works with <random> distributions.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform double in the open interval (0, 1).
  double uniform_open() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Deterministically derives a child seed from a parent seed and a path of
/// indices. Distinct paths give statistically independent streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = SplitMix64::mix(seed ^ 0x6a09e667f3bcc909ULL);
  for (std::uint64_t index : path) {
    h = SplitMix64::mix(h ^ SplitMix64::mix(index + 0x9e3779b97f4a7c15ULL));
  }
  return h;
}

// Stream tags keep derived seeds for unrelated purposes apart.
namespace stream {
inline constexpr std::uint64_t kModel = 1;
inline constexpr std::uint64_t kReward = 2;
inline constexpr std::uint64_t kScalar = 3;
inline constexpr std::uint64_t kOracle = 4;
inline constexpr std::uint64_t kEqrStep = 5;
inline constexpr std::uint64_t kEqrInit = 6;
inline constexpr std::uint64_t kEnsemble = 7;
inline constexpr std::uint64_t kRollout = 8;
inline constexpr std::uint64_t kPsrl = 9;
inline constexpr std::uint64_t kTrial = 10;
inline constexpr std::uint64_t kInstance = 11;
}  // namespace stream

}  // namespace vdist
