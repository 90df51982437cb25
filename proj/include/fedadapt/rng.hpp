#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace fedadapt {

// Seeded random stream. The engine is std::mt19937_64 (fully specified by the
// standard); every conversion to reals/indices is done here rather than via
// <random> distributions, whose outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream for (seed, purpose, index), e.g. one per client.
  static Rng stream(std::uint64_t seed, std::uint64_t purpose,
                    std::uint64_t index) {
    std::uint64_t s = splitmix(seed);
    s = splitmix(s ^ (purpose * 0x9E3779B97F4A7C15ULL));
    s = splitmix(s ^ (index + 0xD1B54A32D192ED03ULL));
    return Rng(s);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one draw per call.
  double normal(double mean, double stddev) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) *
                     std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Unbiased integer in [0, n) by rejection. n must be > 0.
  std::size_t below(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % bound);
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
};

// Stream purposes; kept in one place so no two subsystems share a stream.
namespace streams {
inline constexpr std::uint64_t kPretrainSplit = 1;
inline constexpr std::uint64_t kSynth = 2;
inline constexpr std::uint64_t kNegatives = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kPretrainShuffle = 5;
inline constexpr std::uint64_t kClientTrain = 6;
inline constexpr std::uint64_t kClientNoise = 7;
inline constexpr std::uint64_t kSelection = 8;
inline constexpr std::uint64_t kDistill = 9;
inline constexpr std::uint64_t kHoldout = 10;
}  // namespace streams

}  // namespace fedadapt
