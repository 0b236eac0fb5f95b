#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace hcrl {

/// Seedable 64-bit generator with platform-independent output.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are not portable across library
/// implementations, so the derived draws are defined here:
///   uniform()   53 high bits of one engine output scaled to [0, 1)
///   normal()    Box-Muller on two uniform() draws, no caching
///   index(n)    rejection sampling on engine output, unbiased
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

/// Fixed offsets added to a command's seed to derive independent streams.
namespace seed_offset {
inline constexpr std::uint64_t kNetworkInit = 1;
inline constexpr std::uint64_t kBatchSampling = 2;
inline constexpr std::uint64_t kTargetNoise = 3;
inline constexpr std::uint64_t kEvaluation = 4;
inline constexpr std::uint64_t kOracleNoise = 5;
inline constexpr std::uint64_t kReferenceReturns = 6;
}  // namespace seed_offset

}  // namespace hcrl
