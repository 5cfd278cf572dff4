#pragma once

#include <span>
#include <vector>

#include "polymatch/costs.hpp"
#include "polymatch/m3g.hpp"
#include "polymatch/matrix.hpp"

namespace polymatch {

/// Which two-view loss an aggregation applies to each pair of views.
/// infonce carries its temperature; byol has no parameters.
struct PairwiseLossKind {
  enum class Family { infonce, byol };

  Family family = Family::byol;
  double tau = 0.0;  ///< softmax temperature, meaningful for infonce only

  /// Contrastive log-softmax loss at temperature `tau` (must be > 0).
  static PairwiseLossKind infonce(double tau);

  /// Positive-pair cosine loss, no parameters.
  static PairwiseLossKind byol();
};

/// How a two-view loss is extended to k views: every unordered pair (pwe) or
/// each view against the average of the rest (ave).
enum class AggregationKind { pwe, ave };

/// Contrastive loss with view-1 anchors:
///   -(1/n) sum_i log( exp(<x1_i, x2_i>/tau) / sum_j exp(<x1_i, x2_j>/tau) ),
/// computed through a max-shifted log-softmax. `symmetrized` averages the
/// two anchor directions. Rows of x2 may have norm below 1 (the one-vs-rest
/// aggregation feeds raw view averages); shapes must match and tau be
/// positive.
double infonce(const Mat& x1, const Mat& x2, double tau, bool symmetrized = false);

/// Positive-pair loss 2 - (2/n) sum_i <x1_i, x2_i>; 0 when the views
/// coincide on the sphere, 4 when they are antipodal.
double byol(const Mat& x1, const Mat& x2);

/// Mean of the pair loss over all unordered view pairs:
///   (2 / (k(k-1))) sum_{l<m} loss(X^l, X^m).
double aggregate_pwe(const EmbeddingBatch& x, const PairwiseLossKind& kind);

/// Mean of the pair loss of each view against the plain average of the
/// remaining views. The average is not re-normalized by default (its rows
/// have norm <= 1); `renormalize` rescales each averaged row back to the
/// sphere before the pair loss.
double aggregate_ave(const EmbeddingBatch& x, const PairwiseLossKind& kind,
                     bool renormalize = false);

/// Loss and ambient gradient of an aggregated pairwise loss over the whole
/// batch, for gradient-based training. The gradient layout matches the
/// batch; when `renormalize` is set the one-vs-rest path chains through the
/// row normalization.
double aggregate_with_gradient(const EmbeddingBatch& x, const PairwiseLossKind& kind,
                               AggregationKind agg, bool renormalize, GradientBatch& grad);

/// Teacher-tracking exponential moving average:
///   out = rho * target + (1 - rho) * source.
/// rho = 1 keeps the target, rho = 0 copies the source; sizes must match and
/// rho lie in [0, 1].
std::vector<double> ema_update(std::span<const double> target,
                               std::span<const double> source, double rho);

}  // namespace polymatch
