#include "polymatch/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <vector>

#include "polymatch/costs.hpp"
#include "polymatch/rng.hpp"
#include "polymatch/solver.hpp"
#include "polymatch/tensor.hpp"

namespace polymatch {

namespace {

/// n^k without overflow, compared against the cap.
bool fits_cap(int k, int n, std::size_t cap) {
  std::size_t total = 1;
  for (int i = 0; i < k; ++i) {
    if (total > cap / static_cast<std::size_t>(n)) return false;
    total *= static_cast<std::size_t>(n);
  }
  return total <= cap;
}

EmbeddingBatch random_batch(int k, int n, int d, Rng rng) {
  std::vector<double> values(static_cast<std::size_t>(k) * n * d);
  for (std::size_t row = 0; row < static_cast<std::size_t>(k) * n; ++row) {
    rng.unit_vector(std::span<double>(values.data() + row * d, d));
  }
  return EmbeddingBatch::from_values(k, n, d, std::move(values));
}

void append_field(std::string& out, const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  out += buf;
}

}  // namespace

void BenchOptions::validate() const {
  if (ns.empty() || ks.empty() || epsilons.empty())
    throw std::invalid_argument("BenchOptions: ns, ks, and epsilons must be non-empty");
  for (int n : ns)
    if (n < 1) throw std::invalid_argument("BenchOptions: every n must be >= 1");
  for (int k : ks)
    if (k < 2) throw std::invalid_argument("BenchOptions: every k must be >= 2");
  for (double e : epsilons)
    if (!(e > 0.0) || !std::isfinite(e))
      throw std::invalid_argument("BenchOptions: every epsilon must be positive and finite");
  if (!(tolerance > 0.0) || !std::isfinite(tolerance))
    throw std::invalid_argument("BenchOptions: tolerance must be positive and finite");
  if (max_iterations < 1)
    throw std::invalid_argument("BenchOptions: max_iterations must be >= 1");
  if (dim < 1) throw std::invalid_argument("BenchOptions: dim must be >= 1");
}

BenchSummary run_bench(const BenchOptions& opt) {
  opt.validate();
  const double eps_lo = *std::min_element(opt.epsilons.begin(), opt.epsilons.end());
  const double eps_hi = *std::max_element(opt.epsilons.begin(), opt.epsilons.end());
  Rng base(opt.seed);

  BenchSummary summary;
  for (int n : opt.ns) {
    for (int k : opt.ks) {
      if (!fits_cap(k, n, tensor_element_cap())) {
        summary.skipped.push_back(
            {n, k,
             "n^k exceeds the tensor element cap of " +
                 std::to_string(tensor_element_cap()) + " elements"});
        continue;
      }
      const EmbeddingBatch x = random_batch(
          k, n, opt.dim,
          base.fork((static_cast<std::uint64_t>(n) << 8) ^ static_cast<std::uint64_t>(k)));
      int iters_lo = -1, iters_hi = -1;
      for (double eps : opt.epsilons) {
        SolverConfig cfg;
        cfg.epsilon = eps;
        cfg.tolerance = opt.tolerance;
        cfg.max_iterations = opt.max_iterations;
        const auto start = std::chrono::steady_clock::now();
        const DenseTensor cost = cost_tensor(x, MultiwayCost::circular_variance());
        const SolveReport rep = mm_sinkhorn(cost, cfg);
        const std::chrono::duration<double> elapsed =
            std::chrono::steady_clock::now() - start;
        const BenchRecord rec{n,           k,
                              eps,         rep.iterations,
                              rep.deviation, rep.converged,
                              elapsed.count()};
        if (eps == eps_lo) iters_lo = rec.iterations;
        if (eps == eps_hi) iters_hi = rec.iterations;
        if (opt.on_record) opt.on_record(rec);
        summary.records.push_back(rec);
      }
      if (iters_lo >= 0 && iters_hi >= 0 && iters_lo < iters_hi)
        summary.iterations_monotone = false;
    }
  }
  return summary;
}

std::string bench_csv(const BenchSummary& summary) {
  std::string out = "n,k,epsilon,iterations,delta,converged,wall_time_s\n";
  for (const BenchRecord& r : summary.records) {
    out += std::to_string(r.n);
    out += ',';
    out += std::to_string(r.k);
    out += ',';
    append_field(out, "%.17g", r.epsilon);
    out += ',';
    out += std::to_string(r.iterations);
    out += ',';
    append_field(out, "%.17g", r.delta);
    out += ',';
    out += r.converged ? '1' : '0';
    out += ',';
    append_field(out, "%.6f", r.wall_time_s);
    out += '\n';
  }
  return out;
}

}  // namespace polymatch
