#pragma once

#include <cstdint>

namespace rtp {

// splitmix64 generator. All random fixtures (parameter init, token ids,
// loss targets) come from this stream so runs are reproducible from a
// single 64-bit seed. Constants are documented in the README.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 bits of mantissa.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform integer in [0, n). Modulo bias is acceptable for fixtures.
  uint64_t next_index(uint64_t n) { return next_u64() % n; }

 private:
  uint64_t state_;
};

}  // namespace rtp
