#pragma once

#include <span>
#include <vector>

#include "polymatch/costs.hpp"
#include "polymatch/matrix.hpp"
#include "polymatch/solver.hpp"
#include "polymatch/tensor.hpp"

namespace polymatch {

/// Gradient of the matching-gap loss with respect to a batch of embeddings.
/// Same [view][point][dim] layout and indexing conventions as EmbeddingBatch
/// (1-based view, 0-based point); entries are always finite.
struct GradientBatch {
  int views = 0;
  int points = 0;
  int dim = 0;
  std::vector<double> values;

  /// True when the underlying solve stopped before reaching its tolerance,
  /// so the coupling behind this gradient is only approximately optimal.
  bool approximate = false;

  std::span<double> row(int view, int point);
  std::span<const double> row(int view, int point) const;
};

/// Solver-facing counters attached to a loss evaluation.
struct M3GDiagnostics {
  double delta = 0.0;                 ///< final marginal deviation of the coupling
  int iterations = 0;                 ///< sweeps the solver spent
  bool converged = false;             ///< whether delta reached the tolerance
  std::size_t cost_clamp_count = 0;   ///< csd resultant clamps while building C
  bool gradient_approximate = false;  ///< set when a gradient was produced from a non-converged solve
};

/// One evaluation of the matching-gap loss.
///
/// The loss is the optimality gap of the ground-truth matching: the entropic
/// matching cost of the diagonal tensor J (weight 1/n on every aligned tuple)
/// minus the entropic matching cost of the solver's coupling rescaled to unit
/// mass. Up to solver tolerance it is nonnegative, and it vanishes exactly
/// when the diagonal coupling is optimal.
struct M3GResult {
  double loss = 0.0;               ///< ground_truth_cost minus the rescaled coupling's cost
  double ground_truth_cost = 0.0;  ///< (1/n) sum_i C[i,...,i] - eps*(log n + 1)
  double ot_value = 0.0;           ///< raw solver value (1/n) sum F - eps * mass
  SolveReport solver_report;       ///< potentials, coupling, convergence record
  M3GDiagnostics diagnostics;

  const DenseTensor& coupling() const { return solver_report.coupling; }
};

/// Loss plus its gradient, sharing a single solve.
struct M3GEvaluation {
  M3GResult result;
  GradientBatch gradient;
};

/// Evaluate the matching-gap loss of a batch under a multiway cost.
/// Builds the cost tensor, runs the multi-marginal solver at cfg, and reports
/// the gap. A non-converged solve is not an error: the loss is still returned
/// and diagnostics.converged is false.
M3GResult m3g(const EmbeddingBatch& x, const MultiwayCost& c, const SolverConfig& cfg);

/// Gradient of the loss with respect to every embedding, by Danskin's
/// theorem: the coupling is treated as constant and the residual tensor
/// T = J - P is contracted against the cost's partial derivatives. Nothing
/// is differentiated through solver sweeps.
///
/// The circular-variance cost takes an analytic path built from k marginals
/// and k*(k-1) pairwise marginals of T: with coefficient gamma,
///   grad[l][j] = -2*gamma*( marginal(T,l)[j] * x^l_j
///                           + sum_{m != l} (pairwise_marginal(T,l,m) X^m)[j] ).
/// Other costs contract their per-tuple partials over the whole tensor and
/// require has_partials().
GradientBatch m3g_gradient(const EmbeddingBatch& x, const MultiwayCost& c,
                           const SolverConfig& cfg);

/// Gradient under the default circular-variance cost.
GradientBatch m3g_gradient(const EmbeddingBatch& x, const SolverConfig& cfg);

/// Loss and gradient from one solve (cheaper than calling both entry points,
/// which would solve twice). diagnostics.gradient_approximate mirrors the
/// gradient's approximate flag.
M3GEvaluation m3g_with_gradient(const EmbeddingBatch& x, const MultiwayCost& c,
                                const SolverConfig& cfg);

/// Two-view convenience wrapper: stacks X1 and X2 (n x d, unit rows) into a
/// batch and evaluates the circular-variance loss at the given epsilon. Same
/// code path as m3g, so it agrees with the general evaluation exactly.
double m3g_k2(const Mat& x1, const Mat& x2, double epsilon,
              SolverConfig cfg = SolverConfig{});

/// Sum T over all entries whose (1-based) axis_a index is i and axis_b index
/// is j, producing an n x n matrix. Row sums of the result reproduce
/// marginal(T, axis_a).
Mat pairwise_marginal(const DenseTensor& t, int axis_a, int axis_b);

}  // namespace polymatch
