#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace polymatch {

/// One timed solver run: problem size, entropic strength, and what the
/// solver did with its sweep budget. wall_time_s covers building the cost
/// tensor plus the solve; everything else is deterministic for a fixed seed.
struct BenchRecord {
  int n = 0;
  int k = 0;
  double epsilon = 0.0;
  int iterations = 0;
  double delta = 0.0;
  bool converged = false;
  double wall_time_s = 0.0;
};

/// A grid cell that was not run because n^k exceeds the tensor element cap.
struct BenchSkip {
  int n = 0;
  int k = 0;
  std::string reason;
};

/// Scaling-grid settings. Each (n, k) cell draws one seeded spherical batch,
/// builds the circular-variance cost once per epsilon, and solves to the
/// given tolerance under the sweep budget.
struct BenchOptions {
  std::vector<int> ns = {8, 16, 32, 64};
  std::vector<int> ks = {2, 3, 4, 5, 6};
  std::vector<double> epsilons = {0.05, 0.2, 1.0};
  double tolerance = 1e-3;
  int max_iterations = 100;
  int dim = 8;
  std::uint64_t seed = 0;
  /// Called right after each record is measured, so partial results survive
  /// a long grid being cut short.
  std::function<void(const BenchRecord&)> on_record;

  void validate() const;
};

struct BenchSummary {
  std::vector<BenchRecord> records;
  std::vector<BenchSkip> skipped;
  /// Per cell, iterations at the smallest epsilon >= iterations at the
  /// largest (sharper regularization should never converge in fewer sweeps).
  bool iterations_monotone = true;
};

/// Run the grid. Over-cap cells are skipped with a note instead of failing
/// the whole run.
BenchSummary run_bench(const BenchOptions& opt);

/// Render records as CSV with a fixed header
/// (n,k,epsilon,iterations,delta,converged,wall_time_s). Every column except
/// wall_time_s is deterministic for a fixed seed and thread count.
std::string bench_csv(const BenchSummary& summary);

}  // namespace polymatch
