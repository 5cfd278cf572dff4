#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace polymatch {

/// Seeded random source used by every experiment driver.
///
/// The engine is std::mt19937_64 (its output sequence is fixed by the
/// standard), and the floating-point distributions are written out by hand
/// because the standard-library distribution objects are allowed to differ
/// between implementations. With both pinned, a seed reproduces the same
/// bytes on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n). Rejection on the raw 64-bit draw.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal draw (Box-Muller; the paired value is cached).
  double normal();

  /// Overwrite `out` with a uniform point on the unit sphere S^{d-1}.
  void unit_vector(std::span<double> out);

  /// Independent generator for a tagged substream. Forking with the same
  /// (seed, tag) always yields the same stream and leaves *this untouched.
  Rng fork(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace polymatch
