#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "polymatch/matrix.hpp"
#include "polymatch/tensor.hpp"

namespace polymatch {

/// How far a row norm may sit from 1 before the batch is rejected.
inline constexpr double kUnitNormTolerance = 1e-6;

/// Floor applied to the resultant length inside c_csd before taking the log
/// (the log is singular when all mass cancels). Clamps are counted in
/// CostDiagnostics, never silent.
inline constexpr double kResultantClamp = 1e-12;

/// Batch of embeddings: k views of n points in R^d, flat storage in
/// [view][point][dim] order. Every row must lie on the unit sphere within
/// kUnitNormTolerance; construction validates rather than renormalizing
/// (use normalize_rows first if that is what you want).
class EmbeddingBatch {
 public:
  static EmbeddingBatch from_values(int k, int n, int d, std::vector<double> values);

  /// Stack per-view n x d matrices (all the same shape) into a batch.
  static EmbeddingBatch from_matrices(const std::vector<Mat>& views);

  int views() const { return k_; }
  int points() const { return n_; }
  int dim() const { return d_; }

  /// One point of one view; `view` is 1-based (it names a tensor axis),
  /// `point` is 0-based.
  std::span<const double> row(int view, int point) const;

  /// Contiguous n x d block of one (1-based) view.
  std::span<const double> view(int view) const;

  std::span<const double> values() const { return v_; }

 private:
  int k_ = 0, n_ = 0, d_ = 0;
  std::vector<double> v_;
};

/// Rescale every row of `m` to unit Euclidean norm. Throws NumericalError on
/// a row too short to carry a direction (norm < 1e-15).
void normalize_rows(Mat& m);

/// Counters filled by cost evaluations that had to clamp.
struct CostDiagnostics {
  std::size_t clamp_count = 0;
};

/// Squared resultant length ||(1/k) sum z_l||^2 of a tuple of unit vectors;
/// 1 when all vectors coincide, 0 when they cancel. Inputs are validated to
/// be unit within kUnitNormTolerance.
double resultant_sq(std::span<const std::span<const double>> z);

/// Circular variance 1 - resultant_sq, in [0, 1].
double c_cv(std::span<const std::span<const double>> z);

/// Circular standard deviation -log(resultant_sq), clamped at
/// kResultantClamp; `clamped` (optional) reports whether the floor fired.
double c_csd(std::span<const std::span<const double>> z, bool* clamped = nullptr);

/// Coefficient used by the circular-variance pairwise expansion
///   cost = coeff * sum_{l<m} ||z_l - z_m||^2.
/// `corrected` (1/k^2) is the value that actually satisfies
/// 1 - ||mean||^2 = (1/k^2) sum_{l<m} ||z_l - z_m||^2 on unit vectors and is
/// the default. `printed` ((2/(k-1))^2) reproduces a scaling that appears in
/// some write-ups of this construction; it differs from the corrected value
/// by a positive per-k factor, which rescales losses but not the optimal
/// couplings. Kept available so both conventions can be compared.
enum class CvCoefficient { corrected, printed };

/// A multiway cost: label, per-tuple evaluator, optional per-tuple partial
/// derivatives (k x d, needed for generic-path gradients). Built-in costs
/// are symmetric in their k arguments.
class MultiwayCost {
 public:
  using TupleRef = std::span<const std::span<const double>>;
  using Evaluator = std::function<double(TupleRef, CostDiagnostics*)>;
  using PartialEvaluator = std::function<void(TupleRef, Mat&)>;

  /// Circular variance in pairwise-expansion form with the chosen
  /// coefficient. Has a fast cost_tensor path and an analytic gradient path.
  static MultiwayCost circular_variance(CvCoefficient coeff = CvCoefficient::corrected);

  /// Circular standard deviation (clamped log of the resultant). Fast
  /// cost_tensor path; gradients go through the generic per-tuple path.
  static MultiwayCost circular_stddev();

  /// Arbitrary user cost; evaluated tuple by tuple (no fast path). Supply
  /// `partials` to make the cost usable with gradient computations.
  static MultiwayCost custom(std::string label, Evaluator eval,
                             PartialEvaluator partials = nullptr);

  const std::string& label() const { return label_; }
  CvCoefficient cv_coefficient() const { return coeff_; }
  bool has_partials() const { return static_cast<bool>(partials_); }

  /// True for the built-in costs, whose tensors can be assembled from
  /// pairwise distance matrices instead of per-tuple evaluation.
  bool has_fast_path() const { return builtin_; }

  double evaluate(TupleRef z, CostDiagnostics* diag = nullptr) const;

  /// d(cost)/d(z_l) for every l, written into `out` (k x d).
  void partials(TupleRef z, Mat& out) const;

 private:
  std::string label_;
  CvCoefficient coeff_ = CvCoefficient::corrected;
  Evaluator eval_;
  PartialEvaluator partials_;
  bool builtin_ = false;
};

/// Pairwise-expansion coefficient value for k views.
double cv_coefficient_value(CvCoefficient coeff, int k);

/// Cost tensor C[i_1,...,i_k] = c(x^1_{i_1}, ..., x^k_{i_k}).
///
/// For the built-in cv/csd labels this runs the fast path: precompute the
/// pairwise n x n squared-distance matrices D^{lm}[i,j] = ||x^l_i - x^m_j||^2
/// for l < m, then accumulate their broadcasts into the k-way tensor (csd
/// additionally maps the accumulated value through the clamped log). Custom
/// costs are evaluated per tuple. Both paths produce the same values for the
/// built-ins.
DenseTensor cost_tensor(const EmbeddingBatch& x, const MultiwayCost& c,
                        CostDiagnostics* diag = nullptr);

}  // namespace polymatch
