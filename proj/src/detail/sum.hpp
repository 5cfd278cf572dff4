#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace polymatch::detail {

// Deterministic summation helpers. Every routine here fixes its evaluation
// order up front, so totals never depend on chunk sizes or thread counts.

// Binary-counter pairwise summation. Leaves are pushed in stream order and
// merged like binary carries, giving the usual O(log n) error growth of
// pairwise summation without needing the whole array up front.
class PairwiseAccumulator {
 public:
  void push(double x) {
    unsigned level = 0;
    while (occupied_ & (1ull << level)) {
      x += partial_[level];
      occupied_ &= ~(1ull << level);
      ++level;
    }
    partial_[level] = x;
    occupied_ |= 1ull << level;
  }

  double total() const {
    double s = 0.0;
    for (unsigned level = 0; level < 64; ++level)
      if (occupied_ & (1ull << level)) s += partial_[level];
    return s;
  }

 private:
  double partial_[64];
  std::uint64_t occupied_ = 0;
};

// Sum of f(0), ..., f(n-1) with 8-element leaves combined in a fixed tree.
template <class F>
double pairwise_map_sum(std::size_t n, F&& f) {
  PairwiseAccumulator acc;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const double s01 = f(i) + f(i + 1);
    const double s23 = f(i + 2) + f(i + 3);
    const double s45 = f(i + 4) + f(i + 5);
    const double s67 = f(i + 6) + f(i + 7);
    acc.push((s01 + s23) + (s45 + s67));
  }
  if (i < n) {
    double tail = 0.0;
    for (; i < n; ++i) tail += f(i);
    acc.push(tail);
  }
  return acc.total();
}

inline double pairwise_sum(const double* x, std::size_t n) {
  return pairwise_map_sum(n, [x](std::size_t i) { return x[i]; });
}

inline double pairwise_dot(const double* a, const double* b, std::size_t n) {
  return pairwise_map_sum(n, [a, b](std::size_t i) { return a[i] * b[i]; });
}

// Neumaier's compensated addition: like Kahan, but the swapped branch also
// covers the case where the incoming term dominates the running sum. Used
// for per-slot accumulators (marginals) where terms arrive one at a time.
class NeumaierSum {
 public:
  void add(double v) {
    const double t = s_ + v;
    if (std::abs(s_) >= std::abs(v))
      c_ += (s_ - t) + v;
    else
      c_ += (v - t) + s_;
    s_ = t;
  }

  double total() const { return s_ + c_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

}  // namespace polymatch::detail
