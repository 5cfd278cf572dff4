#include "polymatch/m3g.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detail/kernels.hpp"
#include "detail/sum.hpp"
#include "polymatch/errors.hpp"

namespace polymatch {

namespace {

// (1/n) * sum_i C[i,i,...,i]: transport cost of the diagonal matching. The
// diagonal entries sit a fixed stride apart (1 + n + ... + n^{k-1}).
double diagonal_mean(const DenseTensor& c) {
  const int n = c.shape().n;
  const int k = c.shape().k;
  std::size_t stride = 0;
  std::size_t power = 1;
  for (int a = 0; a < k; ++a) {
    stride += power;
    power *= static_cast<std::size_t>(n);
  }
  const auto v = c.values();
  const double total = detail::pairwise_map_sum(
      static_cast<std::size_t>(n), [&](std::size_t j) { return v[j * stride]; });
  return total / static_cast<double>(n);
}

// pairwise_marginal for 0-based axes alpha < beta. The trailing axes form a
// contiguous run of length stride_b, summed plainly; run totals feed one
// compensated accumulator per (i, j) slot, in a fixed order.
Mat pairwise_marginal_sorted(const DenseTensor& t, int alpha, int beta) {
  const int n = t.shape().n;
  const int k = t.shape().k;
  const auto v = t.values();
  const std::size_t stride_a = detail::pow_n(n, k - 1 - alpha);
  const std::size_t stride_b = detail::pow_n(n, k - 1 - beta);
  const std::size_t lead = detail::pow_n(n, alpha);
  const std::size_t mid = detail::pow_n(n, beta - alpha - 1);
  std::vector<detail::NeumaierSum> acc(static_cast<std::size_t>(n) *
                                       static_cast<std::size_t>(n));
  for (std::size_t le = 0; le < lead; ++le) {
    const std::size_t base0 = le * stride_a * static_cast<std::size_t>(n);
    for (int i = 0; i < n; ++i) {
      const std::size_t base1 = base0 + static_cast<std::size_t>(i) * stride_a;
      for (std::size_t m = 0; m < mid; ++m) {
        const std::size_t base2 = base1 + m * stride_b * static_cast<std::size_t>(n);
        for (int j = 0; j < n; ++j) {
          const double* p = v.data() + base2 + static_cast<std::size_t>(j) * stride_b;
          double run = 0.0;
          for (std::size_t b = 0; b < stride_b; ++b) run += p[b];
          acc[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
              static_cast<std::size_t>(j)]
              .add(run);
        }
      }
    }
  }
  Mat out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out(i, j) = acc[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                      static_cast<std::size_t>(j)]
                      .total();
  return out;
}

GradientBatch zero_gradient(const EmbeddingBatch& x) {
  GradientBatch g;
  g.views = x.views();
  g.points = x.points();
  g.dim = x.dim();
  g.values.assign(static_cast<std::size_t>(g.views) * static_cast<std::size_t>(g.points) *
                      static_cast<std::size_t>(g.dim),
                  0.0);
  return g;
}

// Analytic circular-variance path. With T = J - P (never materialized: its
// marginals are 1/n or (1/n)*I minus the coupling's), the contraction of T
// against the resultant-form partials collapses to
//   grad[l][j] = -2*gamma*( marginal(T,l)[j] * x^l_j
//                           + sum_{m != l} (pairwise_marginal(T,l,m) X^m)[j] ).
void accumulate_cv(const EmbeddingBatch& x, double gamma, const DenseTensor& p,
                   GradientBatch& g) {
  const int k = x.views();
  const int n = x.points();
  const int d = x.dim();
  const double u = 1.0 / static_cast<double>(n);
  const double c2 = -2.0 * gamma;
  for (int l = 1; l <= k; ++l) {
    const auto ml = detail::axis_marginal(p.values(), n, k, l - 1);
    for (int j = 0; j < n; ++j) {
      const double w = c2 * (u - ml[static_cast<std::size_t>(j)]);
      auto row = g.row(l, j);
      const auto xr = x.row(l, j);
      for (int q = 0; q < d; ++q) row[q] += w * xr[q];
    }
    for (int m = 1; m <= k; ++m) {
      if (m == l) continue;
      const Mat pm = pairwise_marginal(p, l, m);
      for (int j = 0; j < n; ++j) {
        auto row = g.row(l, j);
        for (int i = 0; i < n; ++i) {
          const double w = c2 * ((i == j ? u : 0.0) - pm(j, i));
          const auto xm = x.row(m, i);
          for (int q = 0; q < d; ++q) row[q] += w * xm[q];
        }
      }
    }
  }
}

// Generic path: one walk over the coupling, weighting the cost's per-tuple
// partials by T[tuple] = (diagonal ? 1/n : 0) - P[tuple].
void accumulate_generic(const EmbeddingBatch& x, const MultiwayCost& c,
                        const DenseTensor& p, GradientBatch& g) {
  if (!c.has_partials())
    throw std::invalid_argument("m3g_gradient: cost '" + c.label() +
                                "' has no partial-derivative evaluator; supply one "
                                "via MultiwayCost::custom");
  const int k = x.views();
  const int n = x.points();
  const int d = x.dim();
  const double u = 1.0 / static_cast<double>(n);
  const auto pv = p.values();
  std::vector<int> digits(static_cast<std::size_t>(k), 0);
  std::vector<std::span<const double>> tuple(static_cast<std::size_t>(k));
  Mat part(k, d);
  for (std::size_t flat = 0; flat < pv.size(); ++flat) {
    bool diagonal = true;
    for (int a = 1; a < k; ++a) {
      if (digits[static_cast<std::size_t>(a)] != digits[0]) {
        diagonal = false;
        break;
      }
    }
    const double w = (diagonal ? u : 0.0) - pv[flat];
    if (w != 0.0) {
      for (int a = 0; a < k; ++a)
        tuple[static_cast<std::size_t>(a)] = x.row(a + 1, digits[static_cast<std::size_t>(a)]);
      c.partials(tuple, part);
      for (int a = 0; a < k; ++a) {
        auto row = g.row(a + 1, digits[static_cast<std::size_t>(a)]);
        for (int q = 0; q < d; ++q) row[q] += w * part(a, q);
      }
    }
    for (int a = k - 1; a >= 0; --a) {
      if (++digits[static_cast<std::size_t>(a)] < n) break;
      digits[static_cast<std::size_t>(a)] = 0;
    }
  }
}

// Shared tail of every evaluation: the gap between the diagonal matching's
// cost and the cost of the solver's coupling rescaled to unit mass. The
// rescaled value never materializes a scaled tensor: with s the coupling
// mass, h(P/s) = h(P)/s - eps*log(s).
M3GResult assemble_result(const DenseTensor& cost, SolveReport rep, double eps,
                          const CostDiagnostics& cost_diag) {
  const int n = cost.shape().n;
  const double ground_truth =
      diagonal_mean(cost) - eps * (std::log(static_cast<double>(n)) + 1.0);
  const auto pv = rep.coupling.values();
  const double mass = detail::pairwise_sum(pv.data(), pv.size());
  if (!std::isfinite(mass) || mass <= 0.0)
    throw NumericalError("m3g: coupling mass " + std::to_string(mass) +
                         " is not a positive finite value");
  const double rescaled =
      entropic_matching_cost(rep.coupling, cost, eps) / mass - eps * std::log(mass);

  const M3GDiagnostics diagnostics{rep.deviation, rep.iterations, rep.converged,
                                   cost_diag.clamp_count, false};
  return M3GResult{ground_truth - rescaled, ground_truth, rep.ot_value, std::move(rep),
                   diagnostics};
}

}  // namespace

std::span<double> GradientBatch::row(int view, int point) {
  if (view < 1 || view > views)
    throw std::invalid_argument("GradientBatch::row: view " + std::to_string(view) +
                                " out of range [1, " + std::to_string(views) + "]");
  if (point < 0 || point >= points)
    throw std::invalid_argument("GradientBatch::row: point " + std::to_string(point) +
                                " out of range [0, " + std::to_string(points) + ")");
  const std::size_t off =
      (static_cast<std::size_t>(view - 1) * static_cast<std::size_t>(points) +
       static_cast<std::size_t>(point)) *
      static_cast<std::size_t>(dim);
  return {values.data() + off, static_cast<std::size_t>(dim)};
}

std::span<const double> GradientBatch::row(int view, int point) const {
  auto r = const_cast<GradientBatch*>(this)->row(view, point);
  return {r.data(), r.size()};
}

M3GResult m3g(const EmbeddingBatch& x, const MultiwayCost& c, const SolverConfig& cfg) {
  CostDiagnostics cost_diag;
  const DenseTensor cost = cost_tensor(x, c, &cost_diag);
  SolveReport rep = mm_sinkhorn(cost, cfg);
  return assemble_result(cost, std::move(rep), cfg.epsilon, cost_diag);
}

M3GEvaluation m3g_with_gradient(const EmbeddingBatch& x, const MultiwayCost& c,
                                const SolverConfig& cfg) {
  CostDiagnostics cost_diag;
  const DenseTensor cost = cost_tensor(x, c, &cost_diag);
  SolveReport rep = mm_sinkhorn(cost, cfg);

  GradientBatch g = zero_gradient(x);
  if (c.has_fast_path() && c.label() == "cv")
    accumulate_cv(x, cv_coefficient_value(c.cv_coefficient(), x.views()), rep.coupling, g);
  else
    accumulate_generic(x, c, rep.coupling, g);
  for (const double v : g.values)
    if (!std::isfinite(v))
      throw NumericalError("m3g_gradient: non-finite gradient entry");
  const bool approximate = !rep.converged;
  g.approximate = approximate;

  M3GEvaluation ev{assemble_result(cost, std::move(rep), cfg.epsilon, cost_diag),
                   std::move(g)};
  ev.result.diagnostics.gradient_approximate = approximate;
  return ev;
}

GradientBatch m3g_gradient(const EmbeddingBatch& x, const MultiwayCost& c,
                           const SolverConfig& cfg) {
  return m3g_with_gradient(x, c, cfg).gradient;
}

GradientBatch m3g_gradient(const EmbeddingBatch& x, const SolverConfig& cfg) {
  return m3g_gradient(x, MultiwayCost::circular_variance(), cfg);
}

double m3g_k2(const Mat& x1, const Mat& x2, double epsilon, SolverConfig cfg) {
  if (x1.rows() != x2.rows() || x1.cols() != x2.cols())
    throw std::invalid_argument(
        "m3g_k2: view shapes differ (" + std::to_string(x1.rows()) + "x" +
        std::to_string(x1.cols()) + " vs " + std::to_string(x2.rows()) + "x" +
        std::to_string(x2.cols()) + ")");
  cfg.epsilon = epsilon;
  const EmbeddingBatch x = EmbeddingBatch::from_matrices({x1, x2});
  return m3g(x, MultiwayCost::circular_variance(), cfg).loss;
}

Mat pairwise_marginal(const DenseTensor& t, int axis_a, int axis_b) {
  const int k = t.shape().k;
  const int n = t.shape().n;
  const auto check = [k](int a, const char* name) {
    if (a < 1 || a > k)
      throw std::invalid_argument("pairwise_marginal: " + std::string(name) + " " +
                                  std::to_string(a) + " out of range [1, " +
                                  std::to_string(k) + "]");
  };
  check(axis_a, "axis_a");
  check(axis_b, "axis_b");
  if (axis_a == axis_b)
    throw std::invalid_argument("pairwise_marginal: axes must be distinct (both are " +
                                std::to_string(axis_a) + ")");
  if (axis_a < axis_b) return pairwise_marginal_sorted(t, axis_a - 1, axis_b - 1);
  const Mat swapped = pairwise_marginal_sorted(t, axis_b - 1, axis_a - 1);
  Mat out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = swapped(j, i);
  return out;
}

}  // namespace polymatch
