#pragma once

#include <cstdint>

namespace ifa {

// Counter-based 64-bit generator (SplitMix64). The t-th output is a pure
// function of (seed, t), which keeps generated problems bit-identical
// across platforms and compilers. Instances are cheap and must not be
// shared between threads.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (-1, 1).
  double next_symmetric() { return 2.0 * next_double() - 1.0; }

 private:
  std::uint64_t state_;
};

}  // namespace ifa
