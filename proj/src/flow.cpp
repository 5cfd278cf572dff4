#include "polymatch/flow.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "polymatch/errors.hpp"
#include "polymatch/rng.hpp"

namespace polymatch {

namespace {

/// Solver settings used inside a flow run. The flow problems are small, so
/// a tight tolerance is cheap and keeps logged losses and gradients close to
/// the exact gap.
constexpr double kFlowSolverTolerance = 1e-8;
constexpr int kFlowSolverSweeps = 4000;

/// Seed of the committed circle4 fixture. The preset must be the same
/// trajectory on every machine, so it never reads FlowConfig::seed.
constexpr std::uint64_t kCircleFixtureSeed = 0x0c1c1e04u;

/// Per-view angular jitter of the circle4 fixture (radians), and the extra
/// offset that drags two points of the last view most of the way towards
/// each other's neighbouring centers. The offset is what gives the fixture a
/// genuinely wrong preferred matching at the start, so the run has a gap
/// worth descending.
constexpr double kCircleJitter = 0.25;
constexpr double kCircleSwapOffset = 1.3;

MultiwayCost flow_cost(const std::string& label) {
  if (label == "cv") return MultiwayCost::circular_variance();
  if (label == "csd") return MultiwayCost::circular_stddev();
  throw std::invalid_argument("FlowConfig: cost must be \"cv\" or \"csd\", got \"" + label +
                              "\"");
}

EmbeddingBatch circle_fixture() {
  constexpr int n = 4, k = 3, d = 2;
  Rng rng(kCircleFixtureSeed);
  std::vector<double> angles(static_cast<std::size_t>(k) * n);
  for (int view = 0; view < k; ++view) {
    for (int i = 0; i < n; ++i) {
      const double center = 0.5 * std::numbers::pi * i;
      const double jitter =
          view == 0 ? 0.0 : kCircleJitter * (2.0 * rng.uniform() - 1.0);
      angles[static_cast<std::size_t>(view) * n + i] = center + jitter;
    }
  }
  angles[static_cast<std::size_t>(k - 1) * n + 0] += kCircleSwapOffset;
  angles[static_cast<std::size_t>(k - 1) * n + 1] -= kCircleSwapOffset;

  std::vector<double> values;
  values.reserve(angles.size() * d);
  for (double a : angles) {
    values.push_back(std::cos(a));
    values.push_back(std::sin(a));
  }
  return EmbeddingBatch::from_values(k, n, d, std::move(values));
}

/// One projected gradient step: move every row against the gradient, then
/// pull it back to the sphere. A row that lands at (numerically) zero length
/// has no direction to renormalize to, which counts as divergence.
EmbeddingBatch descend(const EmbeddingBatch& x, const GradientBatch& g, double eta) {
  if (eta == 0.0) return x;  // keep the zero-step iterate bit-identical
  std::vector<double> values(x.values().begin(), x.values().end());
  const int d = x.dim();
  for (int view = 1; view <= x.views(); ++view) {
    for (int i = 0; i < x.points(); ++i) {
      const std::span<const double> grad = g.row(view, i);
      double* row = values.data() +
                    (static_cast<std::size_t>(view - 1) * x.points() + i) * d;
      double norm_sq = 0.0;
      for (int q = 0; q < d; ++q) {
        row[q] -= eta * grad[q];
        norm_sq += row[q] * row[q];
      }
      const double norm = std::sqrt(norm_sq);
      if (!(norm > 1e-15)) {
        throw NumericalError("flow: renormalization hit a zero-length row (view " +
                             std::to_string(view) + ", point " + std::to_string(i) + ")");
      }
      for (int q = 0; q < d; ++q) row[q] /= norm;
    }
  }
  return EmbeddingBatch::from_values(x.views(), x.points(), d, std::move(values));
}

}  // namespace

void FlowConfig::validate() const {
  if (init == FlowInit::random_sphere) {
    if (n < 1) throw std::invalid_argument("FlowConfig: n must be >= 1, got " + std::to_string(n));
    if (k < 2) throw std::invalid_argument("FlowConfig: k must be >= 2, got " + std::to_string(k));
    if (d < 1) throw std::invalid_argument("FlowConfig: d must be >= 1, got " + std::to_string(d));
    TensorShape::of(k, n);
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("FlowConfig: epsilon must be positive and finite");
  if (!(step_size >= 0.0) || !std::isfinite(step_size))
    throw std::invalid_argument("FlowConfig: step_size must be >= 0 and finite");
  if (steps < 0) throw std::invalid_argument("FlowConfig: steps must be >= 0");
  flow_cost(cost);
}

EmbeddingBatch flow_initial_state(const FlowConfig& cfg) {
  cfg.validate();
  if (cfg.init == FlowInit::circle4) return circle_fixture();
  Rng rng(cfg.seed);
  std::vector<double> values(static_cast<std::size_t>(cfg.k) * cfg.n * cfg.d);
  for (std::size_t row = 0; row < static_cast<std::size_t>(cfg.k) * cfg.n; ++row) {
    rng.unit_vector(std::span<double>(values.data() + row * cfg.d, cfg.d));
  }
  return EmbeddingBatch::from_values(cfg.k, cfg.n, cfg.d, std::move(values));
}

FlowResult run_flow(const FlowConfig& cfg) {
  EmbeddingBatch x = flow_initial_state(cfg);  // validates cfg
  const MultiwayCost cost = flow_cost(cfg.cost);
  SolverConfig solver;
  solver.epsilon = cfg.epsilon;
  solver.tolerance = kFlowSolverTolerance;
  solver.max_iterations = kFlowSolverSweeps;

  FlowResult out;
  out.trajectory.reserve(static_cast<std::size_t>(cfg.steps) + 1);
  EmbeddingBatch last_good = x;
  for (int step = 0;; ++step) {
    std::optional<M3GEvaluation> ev;
    try {
      ev.emplace(m3g_with_gradient(x, cost, solver));
    } catch (const NumericalError&) {
      out.diverged = true;
      out.diverged_at = step;
      break;
    }
    if (!std::isfinite(ev->result.loss)) {
      out.diverged = true;
      out.diverged_at = step;
      break;
    }
    out.trajectory.push_back({step, ev->result.loss, ev->result.diagnostics.delta,
                              ev->result.diagnostics.iterations});
    last_good = x;
    if (step == cfg.steps) break;
    try {
      x = descend(x, ev->gradient, cfg.step_size);
    } catch (const NumericalError&) {
      out.diverged = true;
      out.diverged_at = step;
      break;
    }
  }
  out.final_embeddings = out.diverged ? std::move(last_good) : std::move(x);
  return out;
}

}  // namespace polymatch
