#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace difflm {

// SplitMix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

// Random source with platform-independent distributions. The engine is
// std::mt19937_64 (fully specified by the standard); the std::*_distribution
// adaptors are not, so sampling is done by hand here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on {0, ..., n-1}; n must be positive.
  uint64_t uniform_index(uint64_t n) {
    const uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Inverse-CDF draw from nonnegative weights (need not be normalized).
  size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double target = uniform() * total;
    double acc = 0.0;
    size_t last_positive = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      acc += weights[i];
      last_positive = i;
      if (target < acc) return i;
    }
    return last_positive;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace difflm
