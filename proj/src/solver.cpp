#include "polymatch/solver.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "detail/kernels.hpp"
#include "detail/parallel.hpp"
#include "detail/sum.hpp"
#include "polymatch/errors.hpp"

namespace polymatch {

void SolverConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("SolverConfig: epsilon must be positive and finite, got " +
                                std::to_string(epsilon));
  if (!(tolerance > 0.0) || !std::isfinite(tolerance))
    throw std::invalid_argument("SolverConfig: tolerance must be positive and finite");
  if (max_iterations < 1)
    throw std::invalid_argument("SolverConfig: max_iterations must be >= 1");
  if (check_every < 1)
    throw std::invalid_argument("SolverConfig: check_every must be >= 1");
}

namespace {

// out = (tensor_sum(f) - c) / eps, written from scratch.
void scaled_kernel(const PotentialMatrix& f, std::span<const double> c, double eps,
                   std::span<double> out) {
  const double inv = 1.0 / eps;
  const double* src = c.data();
  double* dst = out.data();
  detail::parallel_chunks(c.size(), [src, dst, inv](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) dst[i] = -src[i] * inv;
  });
  for (int a = 0; a < f.k(); ++a)
    detail::axis_add(out, f.n(), f.k(), a, f.column(a + 1), inv);
}

// Summed L1 deviation of all axis marginals of a raw buffer from 1/n.
double deviation_of(std::span<const double> p, int n, int k) {
  const double u = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (int a = 0; a < k; ++a) {
    const auto m = detail::axis_marginal(p, n, k, a);
    total += detail::pairwise_map_sum(m.size(),
                                      [&m, u](std::size_t j) { return std::abs(m[j] - u); });
  }
  return total;
}

}  // namespace

SolveReport mm_sinkhorn(const DenseTensor& cost, const SolverConfig& cfg) {
  cfg.validate();
  const int k = cost.shape().k;
  const int n = cost.shape().n;
  const std::size_t count = cost.size();
  const double eps = cfg.epsilon;
  const double log_n = std::log(static_cast<double>(n));
  const std::span<const double> c = cost.values();

  PotentialMatrix f = PotentialMatrix::zeros(n, k);

  // a = (tensor_sum(f) - c) / eps, maintained incrementally across axis
  // updates; rebuilt from scratch whenever a published number depends on it.
  std::vector<double> a(count);
  scaled_kernel(f, c, eps, a);

  std::vector<double> p(count);  // scratch primal for convergence checks
  std::vector<double> delta(static_cast<std::size_t>(n));

  int completed = 0;
  bool converged = false;

  while (completed < cfg.max_iterations) {
    for (int axis = 0; axis < k; ++axis) {
      // g_j = log-sum-exp of a over every other axis at slot j. Setting
      // f_j += -eps * (g_j + log n) zeroes this axis's marginal residual:
      // afterwards lse_complement(a, axis) == -log n exactly, i.e. the
      // coupling's marginal on `axis` is uniform. Each such block update is
      // the argmax of the dual in that column, hence dual ascent.
      const auto g = detail::lse_complement(a, n, k, axis);
      auto col = f.column_mut(axis + 1);
      for (int j = 0; j < n; ++j) {
        const double d = -eps * (g[static_cast<std::size_t>(j)] + log_n);
        delta[static_cast<std::size_t>(j)] = d;
        col[static_cast<std::size_t>(j)] += d;
      }
      detail::axis_add(a, n, k, axis, delta, 1.0 / eps);
    }
    ++completed;

    if (completed % cfg.check_every != 0) continue;
    detail::exp_map(a, p);
    const double fast_dev = deviation_of(p, n, k);
    if (!std::isfinite(fast_dev))
      throw NumericalError(
          "mm_sinkhorn: non-finite marginal deviation; cost scale is too large for epsilon=" +
          std::to_string(eps));
    if (fast_dev >= cfg.tolerance) continue;

    // Candidate convergence: confirm against a kernel rebuilt from the
    // potentials so accumulated drift in `a` cannot fake a pass.
    scaled_kernel(f, c, eps, a);
    detail::exp_map(a, p);
    if (deviation_of(p, n, k) < cfg.tolerance) {
      converged = true;
      break;
    }
    // Drift false alarm (rare): `a` is now rebuilt, keep sweeping.
  }

  // Publish a coupling recomputed from (f, c) so the recovery identity holds
  // exactly for the returned pair.
  scaled_kernel(f, c, eps, a);
  detail::exp_map(a, p);
  const double dev = deviation_of(p, n, k);
  converged = dev < cfg.tolerance;

  const double mass = detail::pairwise_sum(p.data(), count);
  const double f_sum = detail::pairwise_sum(f.values().data(), f.values().size());
  const double ot = f_sum / static_cast<double>(n) - eps * mass;

  SolveReport report{std::move(f), DenseTensor::from_values(cost.shape(), std::move(p)),
                     ot, dev, completed, converged};
  return report;
}

DenseTensor primal_from_dual(const PotentialMatrix& f, const DenseTensor& cost,
                             double epsilon) {
  if (f.n() != cost.shape().n || f.k() != cost.shape().k)
    throw std::invalid_argument("primal_from_dual: potentials are " + std::to_string(f.n()) +
                                "x" + std::to_string(f.k()) + " but the cost tensor has n=" +
                                std::to_string(cost.shape().n) + ", k=" +
                                std::to_string(cost.shape().k));
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("primal_from_dual: epsilon must be positive and finite");
  std::vector<double> buf(cost.size());
  scaled_kernel(f, cost.values(), epsilon, buf);
  detail::exp_map(buf, buf);
  return DenseTensor::from_values(cost.shape(), std::move(buf));
}

double dual_objective(const PotentialMatrix& f, const DenseTensor& cost, double epsilon) {
  if (f.n() != cost.shape().n || f.k() != cost.shape().k)
    throw std::invalid_argument("dual_objective: potentials are " + std::to_string(f.n()) + "x" +
                                std::to_string(f.k()) + " but the cost tensor has n=" +
                                std::to_string(cost.shape().n) + ", k=" +
                                std::to_string(cost.shape().k));
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("dual_objective: epsilon must be positive and finite");
  std::vector<double> buf(cost.size());
  scaled_kernel(f, cost.values(), epsilon, buf);
  // Mass through exp(lse) over all axes: one extreme entry shifts the
  // reduction instead of overflowing a straight sum of exponentials.
  const DenseTensor a = DenseTensor::from_values(cost.shape(), std::move(buf));
  std::vector<int> all_axes(static_cast<std::size_t>(cost.shape().k));
  for (int i = 0; i < cost.shape().k; ++i) all_axes[static_cast<std::size_t>(i)] = i + 1;
  const double mass = std::exp(log_sum_exp(a, all_axes).scalar());
  const double f_sum = detail::pairwise_sum(f.values().data(), f.values().size());
  return f_sum / static_cast<double>(f.n()) - epsilon * mass;
}

double marginal_deviation(const DenseTensor& p) {
  return deviation_of(p.values(), p.shape().n, p.shape().k);
}

double entropic_matching_cost(const DenseTensor& p, const DenseTensor& cost,
                              double epsilon) {
  if (!(p.shape() == cost.shape()))
    throw std::invalid_argument("entropic_matching_cost: coupling and cost shapes differ");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("entropic_matching_cost: epsilon must be positive and finite");
  const std::span<const double> pv = p.values();
  const std::span<const double> cv = cost.values();
  for (std::size_t i = 0; i < pv.size(); ++i)
    if (pv[i] < 0.0)
      throw std::invalid_argument("entropic_matching_cost: coupling has a negative entry at flat index " +
                                  std::to_string(i));
  const double transport = detail::pairwise_dot(pv.data(), cv.data(), pv.size());
  // <P, log P> with 0 log 0 = 0.
  const double xlogx = detail::pairwise_map_sum(
      pv.size(), [pv](std::size_t i) { return pv[i] > 0.0 ? pv[i] * std::log(pv[i]) : 0.0; });
  const double mass = detail::pairwise_sum(pv.data(), pv.size());
  return transport + epsilon * (xlogx - mass);
}

}  // namespace polymatch
