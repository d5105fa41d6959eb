#pragma once

#include <cstdint>
#include <random>

namespace dpclab {

/// Seeded generator with platform-independent uniform doubles. The standard
/// distributions are implementation-defined, which would break the
/// byte-identical-log contract across toolchains, so doubles are derived
/// directly from the raw 64-bit stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double next_double() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace dpclab
