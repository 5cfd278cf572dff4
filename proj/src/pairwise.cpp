#include "polymatch/pairwise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "detail/sum.hpp"
#include "polymatch/errors.hpp"

namespace polymatch {

namespace {

void check_pair_shapes(const Mat& x1, const Mat& x2, const char* where) {
  if (x1.rows() != x2.rows() || x1.cols() != x2.cols())
    throw std::invalid_argument(
        std::string(where) + ": view shapes differ (" + std::to_string(x1.rows()) + "x" +
        std::to_string(x1.cols()) + " vs " + std::to_string(x2.rows()) + "x" +
        std::to_string(x2.cols()) + ")");
  if (x1.rows() < 1 || x1.cols() < 1)
    throw std::invalid_argument(std::string(where) + ": views must be non-empty");
}

double row_dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t q = 0; q < a.size(); ++q) s += a[q] * b[q];
  return s;
}

// One anchor direction of infonce (x1 rows are anchors). When g1/g2 are
// given, d(loss)/d(x1), d(loss)/d(x2) scaled by `weight` are accumulated
// into them; the returned value is always the unweighted loss.
double infonce_directed(const Mat& x1, const Mat& x2, double tau, double weight,
                        Mat* g1, Mat* g2) {
  const int n = x1.rows();
  const int d = x1.cols();
  std::vector<double> logits(static_cast<std::size_t>(n));
  std::vector<double> per(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto xi = x1.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      logits[static_cast<std::size_t>(j)] = row_dot(xi, x2.row(j)) / tau;
      mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
    }
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(logits[static_cast<std::size_t>(j)] - mx);
    const double lse = mx + std::log(z);
    per[static_cast<std::size_t>(i)] = lse - logits[static_cast<std::size_t>(i)];
    if (g1 != nullptr) {
      for (int j = 0; j < n; ++j) {
        const double p = std::exp(logits[static_cast<std::size_t>(j)] - lse);
        const double w =
            weight * (p - (j == i ? 1.0 : 0.0)) / (tau * static_cast<double>(n));
        auto gi = g1->row(i);
        const auto yj = x2.row(j);
        for (int q = 0; q < d; ++q) gi[q] += w * yj[q];
        auto gj = g2->row(j);
        for (int q = 0; q < d; ++q) gj[q] += w * xi[q];
      }
    }
  }
  return detail::pairwise_sum(per.data(), per.size()) / static_cast<double>(n);
}

// byol with the same accumulate-scaled-gradients contract.
double byol_directed(const Mat& x1, const Mat& x2, double weight, Mat* g1, Mat* g2) {
  const int n = x1.rows();
  const int d = x1.cols();
  const double mean = detail::pairwise_map_sum(
                          static_cast<std::size_t>(n),
                          [&](std::size_t i) {
                            return row_dot(x1.row(static_cast<int>(i)),
                                           x2.row(static_cast<int>(i)));
                          }) /
                      static_cast<double>(n);
  if (g1 != nullptr) {
    const double w = -2.0 * weight / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
      auto gi = g1->row(i);
      auto hi = g2->row(i);
      const auto a = x1.row(i);
      const auto b = x2.row(i);
      for (int q = 0; q < d; ++q) {
        gi[q] += w * b[q];
        hi[q] += w * a[q];
      }
    }
  }
  return 2.0 - 2.0 * mean;
}

double pair_term(const PairwiseLossKind& kind, const Mat& a, const Mat& b, double weight,
                 Mat* ga, Mat* gb) {
  if (kind.family == PairwiseLossKind::Family::infonce) {
    if (!(kind.tau > 0.0))
      throw std::invalid_argument("infonce: tau must be positive, got " +
                                  std::to_string(kind.tau));
    return infonce_directed(a, b, kind.tau, weight, ga, gb);
  }
  return byol_directed(a, b, weight, ga, gb);
}

Mat view_matrix(const EmbeddingBatch& x, int view) {
  const auto v = x.view(view);
  return Mat::from_values(x.points(), x.dim(), std::vector<double>(v.begin(), v.end()));
}

// Plain (un-normalized) average of every view except `skip` (1-based).
Mat rest_average(const std::vector<Mat>& views, int skip) {
  const int k = static_cast<int>(views.size());
  const int n = views[0].rows();
  const int d = views[0].cols();
  Mat avg(n, d);
  for (int m = 0; m < k; ++m) {
    if (m == skip) continue;
    for (int i = 0; i < n; ++i) {
      const auto src = views[static_cast<std::size_t>(m)].row(i);
      auto dst = avg.row(i);
      for (int q = 0; q < d; ++q) dst[q] += src[q];
    }
  }
  const double inv = 1.0 / static_cast<double>(k - 1);
  for (double& v : avg.values_mut()) v *= inv;
  return avg;
}

// Shared core of the value-only and value+gradient aggregations, so both
// produce bit-identical losses. `gview`, when present, receives the ambient
// per-view gradients.
double aggregate_core(const EmbeddingBatch& x, const PairwiseLossKind& kind,
                      AggregationKind agg, bool renormalize, std::vector<Mat>* gview) {
  const int k = x.views();
  const int n = x.points();
  const int d = x.dim();
  if (k < 2)
    throw std::invalid_argument("aggregate: need at least 2 views, got " +
                                std::to_string(k));
  std::vector<Mat> views;
  views.reserve(static_cast<std::size_t>(k));
  for (int l = 1; l <= k; ++l) views.push_back(view_matrix(x, l));

  std::vector<double> terms;
  if (agg == AggregationKind::pwe) {
    const double w = 2.0 / (static_cast<double>(k) * static_cast<double>(k - 1));
    for (int l = 0; l < k; ++l)
      for (int m = l + 1; m < k; ++m)
        terms.push_back(pair_term(kind, views[static_cast<std::size_t>(l)],
                                  views[static_cast<std::size_t>(m)], w,
                                  gview ? &(*gview)[static_cast<std::size_t>(l)] : nullptr,
                                  gview ? &(*gview)[static_cast<std::size_t>(m)] : nullptr));
    return detail::pairwise_sum(terms.data(), terms.size()) * w;
  }

  const double w = 1.0 / static_cast<double>(k);
  for (int l = 0; l < k; ++l) {
    Mat avg = rest_average(views, l);
    std::vector<double> norms(static_cast<std::size_t>(n), 1.0);
    if (renormalize) {
      for (int i = 0; i < n; ++i) {
        auto r = avg.row(i);
        double nsq = 0.0;
        for (int q = 0; q < d; ++q) nsq += r[q] * r[q];
        const double len = std::sqrt(nsq);
        if (len < 1e-15)
          throw NumericalError(
              "aggregate: averaged view row " + std::to_string(i) +
              " has near-zero norm; cannot renormalize");
        norms[static_cast<std::size_t>(i)] = len;
        for (int q = 0; q < d; ++q) r[q] /= len;
      }
    }
    if (gview == nullptr) {
      terms.push_back(pair_term(kind, views[static_cast<std::size_t>(l)], avg, w,
                                nullptr, nullptr));
      continue;
    }
    Mat gb(n, d);
    terms.push_back(pair_term(kind, views[static_cast<std::size_t>(l)], avg, w,
                              &(*gview)[static_cast<std::size_t>(l)], &gb));
    // Push the averaged-side gradient back onto the contributing views; a
    // renormalized average first chains through the row rescaling
    // (tangent-project at the unit row, divide by the raw norm).
    const double share = 1.0 / static_cast<double>(k - 1);
    for (int i = 0; i < n; ++i) {
      auto gi = gb.row(i);
      if (renormalize) {
        const auto unit = avg.row(i);
        const double dot = row_dot({gi.data(), gi.size()}, unit);
        for (int q = 0; q < d; ++q)
          gi[q] = (gi[q] - dot * unit[q]) / norms[static_cast<std::size_t>(i)];
      }
      for (int m = 0; m < k; ++m) {
        if (m == l) continue;
        auto dst = (*gview)[static_cast<std::size_t>(m)].row(i);
        for (int q = 0; q < d; ++q) dst[q] += share * gi[q];
      }
    }
  }
  return detail::pairwise_sum(terms.data(), terms.size()) * w;
}

}  // namespace

PairwiseLossKind PairwiseLossKind::infonce(double tau) {
  if (!(tau > 0.0))
    throw std::invalid_argument("PairwiseLossKind::infonce: tau must be positive, got " +
                                std::to_string(tau));
  PairwiseLossKind kind;
  kind.family = Family::infonce;
  kind.tau = tau;
  return kind;
}

PairwiseLossKind PairwiseLossKind::byol() {
  PairwiseLossKind kind;
  kind.family = Family::byol;
  return kind;
}

double infonce(const Mat& x1, const Mat& x2, double tau, bool symmetrized) {
  check_pair_shapes(x1, x2, "infonce");
  if (!(tau > 0.0))
    throw std::invalid_argument("infonce: tau must be positive, got " +
                                std::to_string(tau));
  const double forward = infonce_directed(x1, x2, tau, 0.0, nullptr, nullptr);
  if (!symmetrized) return forward;
  return 0.5 * (forward + infonce_directed(x2, x1, tau, 0.0, nullptr, nullptr));
}

double byol(const Mat& x1, const Mat& x2) {
  check_pair_shapes(x1, x2, "byol");
  return byol_directed(x1, x2, 0.0, nullptr, nullptr);
}

double aggregate_pwe(const EmbeddingBatch& x, const PairwiseLossKind& kind) {
  return aggregate_core(x, kind, AggregationKind::pwe, false, nullptr);
}

double aggregate_ave(const EmbeddingBatch& x, const PairwiseLossKind& kind,
                     bool renormalize) {
  return aggregate_core(x, kind, AggregationKind::ave, renormalize, nullptr);
}

double aggregate_with_gradient(const EmbeddingBatch& x, const PairwiseLossKind& kind,
                               AggregationKind agg, bool renormalize,
                               GradientBatch& grad) {
  const int k = x.views();
  const int n = x.points();
  const int d = x.dim();
  std::vector<Mat> gview(static_cast<std::size_t>(k), Mat(n, d));
  const double loss = aggregate_core(x, kind, agg, renormalize, &gview);

  grad.views = k;
  grad.points = n;
  grad.dim = d;
  grad.approximate = false;
  grad.values.assign(static_cast<std::size_t>(k) * static_cast<std::size_t>(n) *
                         static_cast<std::size_t>(d),
                     0.0);
  for (int l = 0; l < k; ++l) {
    const auto src = gview[static_cast<std::size_t>(l)].values();
    std::copy(src.begin(), src.end(),
              grad.values.begin() +
                  static_cast<std::size_t>(l) * static_cast<std::size_t>(n) *
                      static_cast<std::size_t>(d));
  }
  for (const double v : grad.values)
    if (!std::isfinite(v))
      throw NumericalError("aggregate_with_gradient: non-finite gradient entry");
  return loss;
}

std::vector<double> ema_update(std::span<const double> target,
                               std::span<const double> source, double rho) {
  if (target.size() != source.size())
    throw std::invalid_argument("ema_update: parameter sizes differ (" +
                                std::to_string(target.size()) + " vs " +
                                std::to_string(source.size()) + ")");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw std::invalid_argument("ema_update: rho must lie in [0, 1], got " +
                                std::to_string(rho));
  std::vector<double> out(target.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = rho * target[i] + (1.0 - rho) * source[i];
  return out;
}

}  // namespace polymatch
