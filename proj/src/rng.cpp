#include "polymatch/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace polymatch {

namespace {

// splitmix64 finalizer; standard way to turn correlated seeds into
// well-separated engine states.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
  // Reject draws below 2^64 mod n so the remainder is exactly uniform.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = eng_();
    if (x >= threshold) return x % n;
  }
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // Box-Muller. u1 is shifted into (0, 1] so the log never sees zero.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(a);
  has_cached_normal_ = true;
  return r * std::cos(a);
}

void Rng::unit_vector(std::span<double> out) {
  if (out.empty()) throw std::invalid_argument("Rng::unit_vector: empty output span");
  for (;;) {
    double norm_sq = 0.0;
    for (double& v : out) {
      v = normal();
      norm_sq += v * v;
    }
    // A gaussian vector this short carries no usable direction; redraw.
    if (norm_sq < 1e-24) continue;
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& v : out) v *= inv;
    return;
  }
}

Rng Rng::fork(std::uint64_t tag) const {
  return Rng(mix64(seed_ ^ mix64(tag)));
}

}  // namespace polymatch
