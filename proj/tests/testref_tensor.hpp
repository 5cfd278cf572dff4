#pragma once

// Brute-force reference implementations used only by the tests. Everything
// here is written the slow, obvious way (explicit multi-index enumeration,
// long double accumulation, no shifting tricks beyond what the comment
// says), so it shares no code paths or algebraic rearrangements with the
// library it checks.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace testref {

// Visit every k-digit multi-index over {0,...,n-1} in lexicographic order.
inline void for_each_index(int k, int n,
                           const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> idx(static_cast<std::size_t>(k), 0);
  for (;;) {
    fn(idx);
    int a = k - 1;
    while (a >= 0 && ++idx[static_cast<std::size_t>(a)] == n) {
      idx[static_cast<std::size_t>(a)] = 0;
      --a;
    }
    if (a < 0) return;
  }
}

// Row-major flat position of a multi-index (axis 1 slowest).
inline std::size_t flat_of(const std::vector<int>& idx, int n) {
  std::size_t f = 0;
  for (int i : idx) f = f * static_cast<std::size_t>(n) + static_cast<std::size_t>(i);
  return f;
}

// log(sum(exp(x))) computed directly in long double, no max shift. Safe for
// |x| up to ~1e4 (exp(1e4) still fits in an 80-bit long double).
inline double naive_lse(const std::vector<double>& xs) {
  long double s = 0.0L;
  for (double x : xs) s += std::exp(static_cast<long double>(x));
  return static_cast<double>(std::log(s));
}

inline std::vector<double> naive_marginal(const std::vector<double>& v, int k, int n,
                                          int axis /*1-based*/) {
  std::vector<long double> acc(static_cast<std::size_t>(n), 0.0L);
  for_each_index(k, n, [&](const std::vector<int>& idx) {
    acc[static_cast<std::size_t>(idx[static_cast<std::size_t>(axis - 1)])] +=
        static_cast<long double>(v[flat_of(idx, n)]);
  });
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = static_cast<double>(acc[static_cast<std::size_t>(j)]);
  return out;
}

// Reduce with naive_lse over the listed (1-based) axes; kept axes keep their
// original order, exactly the contract the library documents.
inline std::vector<double> naive_lse_reduce(const std::vector<double>& v, int k, int n,
                                            const std::vector<int>& axes) {
  std::vector<bool> reduced(static_cast<std::size_t>(k), false);
  for (int a : axes) reduced[static_cast<std::size_t>(a - 1)] = true;
  std::size_t out_size = 1;
  for (int a = 0; a < k; ++a)
    if (!reduced[static_cast<std::size_t>(a)]) out_size *= static_cast<std::size_t>(n);
  std::vector<std::vector<double>> groups(out_size);
  for_each_index(k, n, [&](const std::vector<int>& idx) {
    std::size_t slot = 0;
    for (int a = 0; a < k; ++a)
      if (!reduced[static_cast<std::size_t>(a)])
        slot = slot * static_cast<std::size_t>(n) +
               static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]);
    groups[slot].push_back(v[flat_of(idx, n)]);
  });
  std::vector<double> out(out_size);
  for (std::size_t s = 0; s < out_size; ++s) out[s] = naive_lse(groups[s]);
  return out;
}

inline double naive_dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += static_cast<long double>(a[i]) * static_cast<long double>(b[i]);
  return static_cast<double>(s);
}

inline double naive_sum(const std::vector<double>& a) {
  long double s = 0.0L;
  for (double x : a) s += static_cast<long double>(x);
  return static_cast<double>(s);
}

}  // namespace testref
