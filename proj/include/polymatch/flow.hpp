#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polymatch/costs.hpp"
#include "polymatch/m3g.hpp"
#include "polymatch/solver.hpp"

namespace polymatch {

/// How a gradient-flow run seeds its embeddings.
enum class FlowInit {
  random_sphere,  ///< k*n independent uniform points on the d-sphere
  circle4,        ///< pinned fixture: 4 circle centers, 3 jittered views, d=2
};

/// Configuration of a projected-gradient-descent run on the matching-gap
/// loss. The circle4 preset overrides n, k, d (4, 3, 2) and draws its jitter
/// from a fixed internal seed so the trajectory is a committed fixture.
struct FlowConfig {
  int n = 4;
  int k = 3;
  int d = 2;
  double epsilon = 0.1;
  std::string cost = "cv";  ///< "cv" or "csd"
  double step_size = 0.05;
  int steps = 500;
  std::uint64_t seed = 1;
  FlowInit init = FlowInit::random_sphere;

  void validate() const;
};

/// One logged flow step: the loss and solver state at the current iterate.
struct FlowStep {
  int step = 0;
  double loss = 0.0;
  double delta = 0.0;
  int iterations = 0;
};

/// Trajectory plus the embeddings it ended on. On divergence (non-finite
/// loss or a collapsed row during renormalization) the run stops early,
/// `diverged` is set, and `final_embeddings` holds the last finite iterate
/// so callers can dump it.
struct FlowResult {
  std::vector<FlowStep> trajectory;  ///< steps + 1 entries: initial state included
  EmbeddingBatch final_embeddings;
  bool diverged = false;
  int diverged_at = -1;  ///< update index that failed, -1 if none
};

/// The embeddings a flow run would start from (exposed so tests can pin the
/// preset fixture).
EmbeddingBatch flow_initial_state(const FlowConfig& cfg);

/// Run x <- renormalize(x - step_size * grad) for cfg.steps updates, logging
/// (step, loss, delta, iterations) before each update and once more at the
/// final iterate. Deterministic for a fixed seed and thread count.
FlowResult run_flow(const FlowConfig& cfg);

}  // namespace polymatch
