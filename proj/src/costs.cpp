#include "polymatch/costs.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "detail/kernels.hpp"
#include "polymatch/errors.hpp"

namespace polymatch {

namespace {

using TupleRef = MultiwayCost::TupleRef;

void validate_tuple(TupleRef z, const char* who) {
  if (z.empty()) throw std::invalid_argument(std::string(who) + ": empty tuple");
  const std::size_t d = z[0].size();
  if (d == 0) throw std::invalid_argument(std::string(who) + ": zero-dimensional vectors");
  for (std::size_t l = 0; l < z.size(); ++l) {
    if (z[l].size() != d)
      throw std::invalid_argument(std::string(who) + ": tuple vectors have mixed dimensions");
    double nsq = 0.0;
    for (double v : z[l]) nsq += v * v;
    const double norm = std::sqrt(nsq);
    // NaN norms fail this comparison too, so non-finite inputs land here.
    if (!(std::abs(norm - 1.0) <= kUnitNormTolerance))
      throw std::invalid_argument(std::string(who) + ": vector " + std::to_string(l + 1) +
                                  " has norm " + std::to_string(norm) +
                                  ", more than 1e-6 away from unit");
  }
}

// ||(1/k) sum_l z_l||^2, straight from the definition.
double mean_norm_sq(TupleRef z) {
  const std::size_t k = z.size();
  const std::size_t d = z[0].size();
  double acc = 0.0;
  for (std::size_t q = 0; q < d; ++q) {
    double s = 0.0;
    for (std::size_t l = 0; l < k; ++l) s += z[l][q];
    acc += s * s;
  }
  return acc / (static_cast<double>(k) * static_cast<double>(k));
}

// sum_{l<m} ||z_l - z_m||^2.
double pairwise_distance_sum(TupleRef z) {
  const std::size_t k = z.size();
  const std::size_t d = z[0].size();
  double total = 0.0;
  for (std::size_t l = 0; l < k; ++l) {
    for (std::size_t m = l + 1; m < k; ++m) {
      double dist = 0.0;
      for (std::size_t q = 0; q < d; ++q) {
        const double diff = z[l][q] - z[m][q];
        dist += diff * diff;
      }
      total += dist;
    }
  }
  return total;
}

// Partials of the resultant-definition form: for any scale s,
//   d/dz_l [ s * (1 - ||(1/k) sum_m z_m||^2) ] = -s * (2/k^2) * sum_m z_m,
// identical for every l. The built-in evaluators use the pairwise expansion,
// which coincides with the definition form on the sphere, so these are the
// exact gradients of the costs restricted to their domain; off-sphere the
// two forms differ only radially.
void definition_form_partials(TupleRef z, double scale, Mat& out) {
  const int k = static_cast<int>(z.size());
  const int d = static_cast<int>(z[0].size());
  if (out.rows() != k || out.cols() != d)
    throw std::invalid_argument("MultiwayCost::partials: output matrix must be k x d");
  std::vector<double> colsum(static_cast<std::size_t>(d), 0.0);
  for (int l = 0; l < k; ++l)
    for (int q = 0; q < d; ++q)
      colsum[static_cast<std::size_t>(q)] += z[static_cast<std::size_t>(l)][static_cast<std::size_t>(q)];
  const double factor = -scale * 2.0 / (static_cast<double>(k) * static_cast<double>(k));
  for (int l = 0; l < k; ++l)
    for (int q = 0; q < d; ++q) out(l, q) = factor * colsum[static_cast<std::size_t>(q)];
}

// Broadcast-add an n x n matrix indexed by axes (a, b), a < b, into a flat
// k-way accumulator.
void pair_broadcast_add(std::span<double> acc, int n, int k, int a, int b,
                        const Mat& dist) {
  const std::size_t outer = detail::pow_n(n, a);
  const std::size_t mid = detail::pow_n(n, b - a - 1);
  const std::size_t inner = detail::pow_n(n, k - 1 - b);
  double* p = acc.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (int i = 0; i < n; ++i) {
      for (std::size_t md = 0; md < mid; ++md) {
        for (int j = 0; j < n; ++j) {
          const double v = dist(i, j);
          for (std::size_t t = 0; t < inner; ++t) p[t] += v;
          p += inner;
        }
      }
    }
  }
}

}  // namespace

EmbeddingBatch EmbeddingBatch::from_values(int k, int n, int d, std::vector<double> values) {
  if (k < 1) throw std::invalid_argument("EmbeddingBatch: k must be >= 1, got " + std::to_string(k));
  if (n < 1) throw std::invalid_argument("EmbeddingBatch: n must be >= 1, got " + std::to_string(n));
  if (d < 1) throw std::invalid_argument("EmbeddingBatch: d must be >= 1, got " + std::to_string(d));
  const std::size_t want = static_cast<std::size_t>(k) * static_cast<std::size_t>(n) *
                           static_cast<std::size_t>(d);
  if (values.size() != want)
    throw std::invalid_argument("EmbeddingBatch: expected " + std::to_string(want) +
                                " values (k*n*d), got " + std::to_string(values.size()));
  for (int l = 0; l < k; ++l) {
    for (int i = 0; i < n; ++i) {
      const double* row = values.data() +
                          (static_cast<std::size_t>(l) * static_cast<std::size_t>(n) +
                           static_cast<std::size_t>(i)) *
                              static_cast<std::size_t>(d);
      double nsq = 0.0;
      for (int q = 0; q < d; ++q) nsq += row[q] * row[q];
      const double norm = std::sqrt(nsq);
      if (!(std::abs(norm - 1.0) <= kUnitNormTolerance))
        throw std::invalid_argument(
            "EmbeddingBatch: row (view " + std::to_string(l + 1) + ", point " +
            std::to_string(i) + ") has norm " + std::to_string(norm) +
            "; embeddings must be unit vectors (normalize_rows first if needed)");
    }
  }
  EmbeddingBatch x;
  x.k_ = k;
  x.n_ = n;
  x.d_ = d;
  x.v_ = std::move(values);
  return x;
}

EmbeddingBatch EmbeddingBatch::from_matrices(const std::vector<Mat>& views) {
  if (views.empty()) throw std::invalid_argument("EmbeddingBatch: no views given");
  const int n = views[0].rows();
  const int d = views[0].cols();
  std::vector<double> flat;
  flat.reserve(views.size() * static_cast<std::size_t>(n) * static_cast<std::size_t>(d));
  for (const Mat& m : views) {
    if (m.rows() != n || m.cols() != d)
      throw std::invalid_argument("EmbeddingBatch: views have mismatched shapes");
    flat.insert(flat.end(), m.values().begin(), m.values().end());
  }
  return from_values(static_cast<int>(views.size()), n, d, std::move(flat));
}

std::span<const double> EmbeddingBatch::row(int view, int point) const {
  if (view < 1 || view > k_)
    throw std::invalid_argument("EmbeddingBatch::row: view " + std::to_string(view) +
                                " out of range [1, " + std::to_string(k_) + "]");
  if (point < 0 || point >= n_)
    throw std::invalid_argument("EmbeddingBatch::row: point " + std::to_string(point) +
                                " out of range [0, " + std::to_string(n_ - 1) + "]");
  return {v_.data() + (static_cast<std::size_t>(view - 1) * static_cast<std::size_t>(n_) +
                       static_cast<std::size_t>(point)) *
                          static_cast<std::size_t>(d_),
          static_cast<std::size_t>(d_)};
}

std::span<const double> EmbeddingBatch::view(int view) const {
  if (view < 1 || view > k_)
    throw std::invalid_argument("EmbeddingBatch::view: view " + std::to_string(view) +
                                " out of range [1, " + std::to_string(k_) + "]");
  return {v_.data() + static_cast<std::size_t>(view - 1) * static_cast<std::size_t>(n_) *
                          static_cast<std::size_t>(d_),
          static_cast<std::size_t>(n_) * static_cast<std::size_t>(d_)};
}

void normalize_rows(Mat& m) {
  for (int r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double nsq = 0.0;
    for (double v : row) nsq += v * v;
    const double norm = std::sqrt(nsq);
    if (!(norm > 1e-15))
      throw NumericalError("normalize_rows: row " + std::to_string(r) +
                           " has near-zero norm, no direction to keep");
    for (double& v : row) v /= norm;
  }
}

double resultant_sq(std::span<const std::span<const double>> z) {
  validate_tuple(z, "resultant_sq");
  return mean_norm_sq(z);
}

double c_cv(std::span<const std::span<const double>> z) {
  validate_tuple(z, "c_cv");
  return 1.0 - mean_norm_sq(z);
}

double c_csd(std::span<const std::span<const double>> z, bool* clamped) {
  validate_tuple(z, "c_csd");
  double r = mean_norm_sq(z);
  const bool hit = r < kResultantClamp;
  if (hit) r = kResultantClamp;
  if (clamped) *clamped = hit;
  return -std::log(r);
}

double cv_coefficient_value(CvCoefficient coeff, int k) {
  if (k < 1) throw std::invalid_argument("cv_coefficient_value: k must be >= 1");
  if (coeff == CvCoefficient::corrected)
    return 1.0 / (static_cast<double>(k) * static_cast<double>(k));
  // printed variant (2/(k-1))^2; with a single view there are no pairs and
  // the coefficient multiplies an empty sum, so 0 keeps the value finite.
  if (k == 1) return 0.0;
  const double f = 2.0 / static_cast<double>(k - 1);
  return f * f;
}

MultiwayCost MultiwayCost::circular_variance(CvCoefficient coeff) {
  MultiwayCost c;
  c.label_ = "cv";
  c.coeff_ = coeff;
  c.builtin_ = true;
  c.eval_ = [coeff](TupleRef z, CostDiagnostics*) {
    validate_tuple(z, "cv");
    return cv_coefficient_value(coeff, static_cast<int>(z.size())) * pairwise_distance_sum(z);
  };
  c.partials_ = [coeff](TupleRef z, Mat& out) {
    validate_tuple(z, "cv partials");
    // On the sphere the evaluator equals gamma * k^2 * (1 - ||mean||^2).
    const int k = static_cast<int>(z.size());
    const double s = cv_coefficient_value(coeff, k) * static_cast<double>(k) * static_cast<double>(k);
    definition_form_partials(z, s, out);
  };
  return c;
}

MultiwayCost MultiwayCost::circular_stddev() {
  MultiwayCost c;
  c.label_ = "csd";
  c.builtin_ = true;
  c.eval_ = [](TupleRef z, CostDiagnostics* diag) {
    validate_tuple(z, "csd");
    const int k = static_cast<int>(z.size());
    const double gamma = 1.0 / (static_cast<double>(k) * static_cast<double>(k));
    double r = 1.0 - gamma * pairwise_distance_sum(z);
    if (r < kResultantClamp) {
      r = kResultantClamp;
      if (diag) ++diag->clamp_count;
    }
    return -std::log(r);
  };
  c.partials_ = [](TupleRef z, Mat& out) {
    validate_tuple(z, "csd partials");
    const int k = static_cast<int>(z.size());
    const double gamma = 1.0 / (static_cast<double>(k) * static_cast<double>(k));
    const double r = 1.0 - gamma * pairwise_distance_sum(z);
    if (r < kResultantClamp) {
      // Clamped region is flat: the cost no longer responds to the inputs.
      for (int l = 0; l < out.rows(); ++l)
        for (int q = 0; q < out.cols(); ++q) out(l, q) = 0.0;
      return;
    }
    // csd = -log(r) with r the squared resultant length, so the chain rule
    // scales the resultant-form partials by 1/r.
    definition_form_partials(z, 1.0 / r, out);
  };
  return c;
}

MultiwayCost MultiwayCost::custom(std::string label, Evaluator eval,
                                  PartialEvaluator partials) {
  if (!eval) throw std::invalid_argument("MultiwayCost::custom: evaluator is required");
  if (label.empty()) throw std::invalid_argument("MultiwayCost::custom: label is required");
  MultiwayCost c;
  c.label_ = std::move(label);
  c.eval_ = std::move(eval);
  c.partials_ = std::move(partials);
  return c;
}

double MultiwayCost::evaluate(TupleRef z, CostDiagnostics* diag) const {
  return eval_(z, diag);
}

void MultiwayCost::partials(TupleRef z, Mat& out) const {
  if (!partials_)
    throw std::invalid_argument("MultiwayCost::partials: cost '" + label_ +
                                "' has no partial-derivative evaluator");
  partials_(z, out);
}

DenseTensor cost_tensor(const EmbeddingBatch& x, const MultiwayCost& c,
                        CostDiagnostics* diag) {
  const int k = x.views();
  const int n = x.points();
  const int d = x.dim();
  const TensorShape shape = TensorShape::of(k, n);

  if (c.has_fast_path()) {
    const bool is_csd = c.label() == "csd";
    const double gamma = is_csd
                             ? 1.0 / (static_cast<double>(k) * static_cast<double>(k))
                             : cv_coefficient_value(c.cv_coefficient(), k);
    std::vector<double> acc(shape.element_count(), 0.0);
    Mat dist(n, n);
    for (int a = 0; a < k; ++a) {
      for (int b = a + 1; b < k; ++b) {
        for (int i = 0; i < n; ++i) {
          const auto zi = x.row(a + 1, i);
          for (int j = 0; j < n; ++j) {
            const auto zj = x.row(b + 1, j);
            double dsq = 0.0;
            for (int q = 0; q < d; ++q) {
              const double diff = zi[static_cast<std::size_t>(q)] - zj[static_cast<std::size_t>(q)];
              dsq += diff * diff;
            }
            dist(i, j) = gamma * dsq;
          }
        }
        pair_broadcast_add(acc, n, k, a, b, dist);
      }
    }
    if (is_csd) {
      std::size_t clamps = 0;
      for (double& v : acc) {
        double r = 1.0 - v;
        if (r < kResultantClamp) {
          r = kResultantClamp;
          ++clamps;
        }
        v = -std::log(r);
      }
      if (diag) diag->clamp_count += clamps;
    }
    return DenseTensor::from_values(shape, std::move(acc));
  }

  // Generic path: evaluate the cost tuple by tuple in flat order.
  std::vector<double> out(shape.element_count());
  std::vector<std::span<const double>> tuple(static_cast<std::size_t>(k));
  std::vector<int> digit(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (int a = 0; a < k; ++a)
      tuple[static_cast<std::size_t>(a)] = x.row(a + 1, digit[static_cast<std::size_t>(a)]);
    out[i] = c.evaluate(tuple, diag);
    for (int a = k - 1; a >= 0; --a) {
      auto& dg = digit[static_cast<std::size_t>(a)];
      if (++dg < n) break;
      dg = 0;
    }
  }
  return DenseTensor::from_values(shape, std::move(out));
}

}  // namespace polymatch
