#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "detail/parallel.hpp"
#include "detail/sum.hpp"

namespace polymatch::detail {

// Shared flat-buffer kernels for order-k tensors with equal axis lengths.
// Layout everywhere: row-major, axis 0 slowest, axis k-1 fastest (these
// helpers use 0-based axes; the public API converts from its 1-based
// convention before calling in).

inline std::size_t pow_n(int n, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= static_cast<std::size_t>(n);
  return r;
}

// buf(i_0,...,i_{k-1}) += scale * vec[i_axis] for every element.
inline void axis_add(std::span<double> buf, int n, int k, int axis,
                     std::span<const double> vec, double scale) {
  const std::size_t inner = pow_n(n, k - 1 - axis);
  const std::size_t outer = pow_n(n, axis);
  double* p = buf.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (int j = 0; j < n; ++j) {
      const double add = scale * vec[static_cast<std::size_t>(j)];
      for (std::size_t b = 0; b < inner; ++b) p[b] += add;
      p += inner;
    }
  }
}

// Marginal on `axis`: out[j] = sum over all elements with that axis index.
// Runs are summed left to right (they are contiguous and short-lived in
// cache); run totals feed per-slot compensated accumulators so the result
// does not depend on how the outer loop interleaves slots.
inline std::vector<double> axis_marginal(std::span<const double> v, int n, int k,
                                         int axis) {
  const std::size_t inner = pow_n(n, k - 1 - axis);
  const std::size_t outer = pow_n(n, axis);
  std::vector<NeumaierSum> acc(static_cast<std::size_t>(n));
  const double* p = v.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (int j = 0; j < n; ++j) {
      double run = 0.0;
      for (std::size_t b = 0; b < inner; ++b) run += p[b];
      acc[static_cast<std::size_t>(j)].add(run);
      p += inner;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = acc[static_cast<std::size_t>(j)].total();
  return out;
}

// log(sum(exp)) reduced over every axis except `axis`, returning one value
// per index of the kept axis. Max-shifted; requires finite input (the
// solver's scaled buffers always are). A slice that is identically -inf
// yields -inf.
inline std::vector<double> lse_complement(std::span<const double> v, int n, int k,
                                          int axis) {
  const std::size_t inner = pow_n(n, k - 1 - axis);
  const std::size_t outer = pow_n(n, axis);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> m(static_cast<std::size_t>(n), neg_inf);

  const double* p = v.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (int j = 0; j < n; ++j) {
      double mj = m[static_cast<std::size_t>(j)];
      for (std::size_t b = 0; b < inner; ++b) mj = mj < p[b] ? p[b] : mj;
      m[static_cast<std::size_t>(j)] = mj;
      p += inner;
    }
  }

  std::vector<NeumaierSum> s(static_cast<std::size_t>(n));
  p = v.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (int j = 0; j < n; ++j) {
      const double mj = m[static_cast<std::size_t>(j)];
      if (mj != neg_inf) {
        double run = 0.0;
        for (std::size_t b = 0; b < inner; ++b) run += std::exp(p[b] - mj);
        s[static_cast<std::size_t>(j)].add(run);
      }
      p += inner;
    }
  }

  std::vector<double> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double mj = m[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(j)] =
        mj == neg_inf ? neg_inf : mj + std::log(s[static_cast<std::size_t>(j)].total());
  }
  return out;
}

// out[i] = exp(in[i]); elementwise, safe to chunk across threads.
inline void exp_map(std::span<const double> in, std::span<double> out) {
  const double* src = in.data();
  double* dst = out.data();
  parallel_chunks(in.size(), [src, dst](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) dst[i] = std::exp(src[i]);
  });
}

}  // namespace polymatch::detail
