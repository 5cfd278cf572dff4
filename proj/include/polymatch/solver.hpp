#pragma once

#include "polymatch/tensor.hpp"

namespace polymatch {

/// Settings for the multi-marginal entropic solver.
struct SolverConfig {
  /// Entropic regularisation strength (> 0, finite). Smaller values sharpen
  /// the coupling and slow convergence.
  double epsilon = 1.0;
  /// Stop once the summed L1 deviation of all axis marginals from uniform
  /// drops below this.
  double tolerance = 1e-3;
  /// Budget of full sweeps over the k axes.
  int max_iterations = 1000;
  /// Sweeps between convergence checks (checks cost an extra pass over the
  /// tensor, so large problems may want > 1).
  int check_every = 1;

  void validate() const;
};

/// Result of one solve. The returned coupling is recomputed directly from
/// the final potentials, so coupling == exp((tensor_sum(F) - C) / eps) holds
/// exactly, not just up to iteration drift.
struct SolveReport {
  PotentialMatrix potentials;
  DenseTensor coupling;
  double ot_value = 0.0;   ///< dual objective at the returned potentials
  double deviation = 0.0;  ///< summed L1 marginal deviation of `coupling`
  int iterations = 0;      ///< completed sweeps
  bool converged = false;  ///< deviation < tolerance within the sweep budget
};

/// Entropic transport between the k uniform marginals 1/n of `cost`.
///
/// Block-coordinate ascent on the dual: each sweep visits the axes in order
/// and replaces one axis's potentials with the unique values that make that
/// axis's coupling marginal exactly uniform (a log-domain Bregman
/// projection). Every block update maximises the dual over its column, so
/// the dual objective is non-decreasing across updates.
///
/// On an exhausted budget the last iterate is returned with
/// converged == false; dual ascent makes it the best iterate seen.
SolveReport mm_sinkhorn(const DenseTensor& cost, const SolverConfig& cfg);

/// Coupling induced by potentials: P = exp((tensor_sum(F) - C) / eps).
DenseTensor primal_from_dual(const PotentialMatrix& f, const DenseTensor& cost,
                             double epsilon);

/// Dual objective (1/n) * sum(F) - eps * mass(P(F)). Agrees with
/// SolveReport::ot_value when evaluated at the returned potentials.
double dual_objective(const PotentialMatrix& f, const DenseTensor& cost,
                      double epsilon);

/// Summed L1 distance of all k axis marginals of `p` from uniform 1/n.
double marginal_deviation(const DenseTensor& p);

/// Entropic cost of an explicit nonnegative tensor:
/// <P, C> + eps * <P, log(P) - 1>, with the 0 * log(0) = 0 convention.
double entropic_matching_cost(const DenseTensor& p, const DenseTensor& cost,
                              double epsilon);

}  // namespace polymatch
