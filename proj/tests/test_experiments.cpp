#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "polymatch/bench.hpp"
#include "polymatch/costs.hpp"
#include "polymatch/encoder.hpp"
#include "polymatch/errors.hpp"
#include "polymatch/flow.hpp"
#include "polymatch/m3g.hpp"
#include "polymatch/pairwise.hpp"
#include "polymatch/rng.hpp"
#include "polymatch/train.hpp"
#include "test_util.hpp"

using namespace polymatch;

namespace {

FlowConfig circle_config(double step_size, int steps) {
  FlowConfig cfg;
  cfg.init = FlowInit::circle4;
  cfg.step_size = step_size;
  cfg.steps = steps;
  return cfg;
}

/// k identical copies of the n coordinate directions in R^n: aligned but only
/// orthogonally separated points, which the matching-gap flow can still
/// improve by spreading them further apart.
EmbeddingBatch identical_basis_views(int k, int n) {
  std::vector<double> values(static_cast<std::size_t>(k) * n * n, 0.0);
  for (int view = 0; view < k; ++view) {
    for (int i = 0; i < n; ++i) {
      values[(static_cast<std::size_t>(view) * n + i) * n + i] = 1.0;
    }
  }
  return EmbeddingBatch::from_values(k, n, n, std::move(values));
}

/// k identical copies of a regular tetrahedron on the unit sphere in R^3:
/// four maximally separated points (every pairwise inner product is the same
/// double, -1/3). Permuting the points maps the configuration onto itself
/// through an orthogonal map, so the loss gradient at each point can only be
/// radial and the renormalized update leaves the configuration in place.
EmbeddingBatch identical_simplex_views(int k) {
  const double a = 1.0 / std::sqrt(3.0);
  const double verts[4][3] = {{a, a, a}, {a, -a, -a}, {-a, a, -a}, {-a, -a, a}};
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(k) * 4 * 3);
  for (int view = 0; view < k; ++view) {
    for (int i = 0; i < 4; ++i) {
      for (int q = 0; q < 3; ++q) values.push_back(verts[i][q]);
    }
  }
  return EmbeddingBatch::from_values(k, 4, 3, std::move(values));
}

}  // namespace

TEST_CASE("circle fixture is pinned: shape, unit rows, exact centers in view 1") {
  FlowConfig cfg = circle_config(0.05, 10);
  const EmbeddingBatch a = flow_initial_state(cfg);
  const EmbeddingBatch b = flow_initial_state(cfg);
  CHECK(a.views() == 3);
  CHECK(a.points() == 4);
  CHECK(a.dim() == 2);
  REQUIRE(a.values().size() == b.values().size());
  for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(a.values()[i] == b.values()[i]);

  for (int view = 1; view <= 3; ++view) {
    for (int i = 0; i < 4; ++i) {
      const std::span<const double> row = a.row(view, i);
      CHECK(std::fabs(row[0] * row[0] + row[1] * row[1] - 1.0) < 1e-12);
    }
  }
  // view 1 sits exactly on the four circle centers
  for (int i = 0; i < 4; ++i) {
    const double angle = 0.5 * std::numbers::pi * i;
    const std::span<const double> row = a.row(1, i);
    CHECK(std::fabs(row[0] - std::cos(angle)) < 1e-15);
    CHECK(std::fabs(row[1] - std::sin(angle)) < 1e-15);
  }
  // the seed field must not affect the pinned fixture
  cfg.seed = 999;
  const EmbeddingBatch c = flow_initial_state(cfg);
  for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(a.values()[i] == c.values()[i]);
}

TEST_CASE("descent on the circle fixture reaches a tenth of the initial loss") {
  const FlowResult r = run_flow(circle_config(0.05, 500));
  REQUIRE_FALSE(r.diverged);
  REQUIRE(r.trajectory.size() == 501);
  const double initial = r.trajectory.front().loss;
  const double final_loss = r.trajectory.back().loss;
  CHECK(initial > 0.0);
  CHECK(final_loss > 0.0);  // entropic smoothing keeps the floor positive
  CHECK(final_loss <= 0.1 * initial);
  for (const FlowStep& s : r.trajectory) {
    CHECK(s.iterations < 4000);  // every solve converged within its budget
    CHECK(s.delta < 1e-7);
  }
  CHECK(r.final_embeddings.views() == 3);
  CHECK(r.final_embeddings.points() == 4);
}

TEST_CASE("small flow steps never increase the loss") {
  const FlowResult r = run_flow(circle_config(1e-3, 300));
  REQUIRE_FALSE(r.diverged);
  for (std::size_t i = 1; i < r.trajectory.size(); ++i) {
    CHECK(r.trajectory[i].loss - r.trajectory[i - 1].loss <= 1e-9);
  }
}

TEST_CASE("zero step size leaves the trajectory and the iterate constant") {
  FlowConfig cfg = circle_config(0.0, 5);
  const EmbeddingBatch start = flow_initial_state(cfg);
  const FlowResult r = run_flow(cfg);
  REQUIRE_FALSE(r.diverged);
  REQUIRE(r.trajectory.size() == 6);
  for (const FlowStep& s : r.trajectory) CHECK(s.loss == r.trajectory.front().loss);
  REQUIRE(r.final_embeddings.values().size() == start.values().size());
  for (std::size_t i = 0; i < start.values().size(); ++i) {
    CHECK(r.final_embeddings.values()[i] == start.values()[i]);
  }
}

TEST_CASE("identical maximally separated views are a stationary flow input") {
  const EmbeddingBatch x = identical_simplex_views(3);

  // the tangent gradient vanishes up to rounding
  SolverConfig tight;
  tight.epsilon = 0.2;
  tight.tolerance = 1e-9;
  tight.max_iterations = 5000;
  GradientBatch g = m3g_gradient(x, tight);
  std::vector<double> tangent(g.values.begin(), g.values.end());
  testutil::tangent_project(tangent, x);
  double norm = 0.0;
  for (double v : tangent) norm += v * v;
  CHECK(std::sqrt(norm) <= 1e-6);

  // Contrast: merely orthogonal points are not stationary (the flow keeps
  // spreading them toward the simplex), so the bound above is not passing
  // because the gradient is identically zero.
  const EmbeddingBatch basis = identical_basis_views(3, 4);
  GradientBatch gb = m3g_gradient(basis, tight);
  std::vector<double> basis_tangent(gb.values.begin(), gb.values.end());
  testutil::tangent_project(basis_tangent, basis);
  double basis_norm = 0.0;
  for (double v : basis_tangent) basis_norm += v * v;
  CHECK(std::sqrt(basis_norm) >= 1e-3);

  // Ten projected-gradient steps from the simplex barely move the loss.
  // run_flow always starts from flow_initial_state, so drive the same update
  // rule by hand from the stationary input.
  const double step_size = 0.05;
  SolverConfig solver;
  solver.epsilon = 0.2;
  solver.tolerance = 1e-8;
  solver.max_iterations = 4000;
  EmbeddingBatch it = x;
  const double first = m3g(it, MultiwayCost::circular_variance(), solver).loss;
  double last = first;
  for (int step = 0; step < 10; ++step) {
    const M3GEvaluation ev =
        m3g_with_gradient(it, MultiwayCost::circular_variance(), solver);
    std::vector<double> moved(it.values().begin(), it.values().end());
    for (int view = 1; view <= it.views(); ++view) {
      for (int p = 0; p < it.points(); ++p) {
        const std::span<const double> gr = ev.gradient.row(view, p);
        double* row = moved.data() +
                      (static_cast<std::size_t>(view - 1) * it.points() + p) * it.dim();
        double norm_sq = 0.0;
        for (int q = 0; q < it.dim(); ++q) {
          row[q] -= step_size * gr[q];
          norm_sq += row[q] * row[q];
        }
        const double len = std::sqrt(norm_sq);
        for (int q = 0; q < it.dim(); ++q) row[q] /= len;
      }
    }
    it = EmbeddingBatch::from_values(it.views(), it.points(), it.dim(), std::move(moved));
    last = m3g(it, MultiwayCost::circular_variance(), solver).loss;
  }
  CHECK(std::fabs(last - first) <= 1e-6);
}

TEST_CASE("random flow runs are reproducible per seed") {
  FlowConfig cfg;
  cfg.init = FlowInit::random_sphere;
  cfg.n = 5;
  cfg.k = 3;
  cfg.d = 4;
  cfg.epsilon = 0.2;
  cfg.step_size = 0.05;
  cfg.steps = 20;
  cfg.seed = 11;
  const FlowResult a = run_flow(cfg);
  const FlowResult b = run_flow(cfg);
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    CHECK(a.trajectory[i].loss == b.trajectory[i].loss);
    CHECK(a.trajectory[i].delta == b.trajectory[i].delta);
    CHECK(a.trajectory[i].iterations == b.trajectory[i].iterations);
  }
  for (std::size_t i = 0; i < a.final_embeddings.values().size(); ++i) {
    CHECK(a.final_embeddings.values()[i] == b.final_embeddings.values()[i]);
  }
  CHECK_FALSE(a.diverged);
  CHECK(a.diverged_at == -1);

  cfg.seed = 12;
  const FlowResult c = run_flow(cfg);
  CHECK(c.trajectory.front().loss != a.trajectory.front().loss);
}

TEST_CASE("flow configuration validation names the offending field") {
  FlowConfig cfg;
  cfg.cost = "triangle";
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("cost"), std::invalid_argument);
  cfg = FlowConfig{};
  cfg.step_size = -0.1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("step_size"), std::invalid_argument);
  cfg = FlowConfig{};
  cfg.steps = -1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("steps"), std::invalid_argument);
  cfg = FlowConfig{};
  cfg.epsilon = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("epsilon"), std::invalid_argument);
  cfg = FlowConfig{};
  cfg.k = 1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("k"), std::invalid_argument);
}

TEST_CASE("encoder backward matches finite differences over every parameter") {
  Rng rng(7);
  const int in_d = 5, hidden = 6, embed = 4, n = 3;
  EncoderParams p = EncoderParams::init(in_d, hidden, embed, rng);
  Mat in1(n, in_d), in2(n, in_d);
  for (double& v : in1.values_mut()) v = rng.normal();
  for (double& v : in2.values_mut()) v = rng.normal();

  const auto loss_of = [&](const EncoderParams& params) {
    const Mat y1 = encoder_forward(params, in1);
    const Mat y2 = encoder_forward(params, in2);
    return byol(y1, y2);
  };

  ForwardCache c1, c2;
  const Mat y1 = encoder_forward(p, in1, &c1);
  const Mat y2 = encoder_forward(p, in2, &c2);
  Mat g1(n, embed), g2(n, embed);
  for (int r = 0; r < n; ++r) {
    for (int q = 0; q < embed; ++q) {
      g1(r, q) = -2.0 / n * y2(r, q);  // d(byol)/d(y1)
      g2(r, q) = -2.0 / n * y1(r, q);
    }
  }
  EncoderGrads grads(p);
  encoder_backward(p, c1, g1, grads);
  encoder_backward(p, c2, g2, grads);

  const double h = 1e-6;
  double worst = 0.0;
  const auto check_param = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    const double up = loss_of(p);
    param = keep - h;
    const double down = loss_of(p);
    param = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::fabs(fd - analytic) / std::max(1.0, std::fabs(fd)));
  };
  for (int r = 0; r < hidden; ++r)
    for (int c = 0; c < in_d; ++c) check_param(p.w1(r, c), grads.w1(r, c));
  for (int r = 0; r < embed; ++r)
    for (int c = 0; c < hidden; ++c) check_param(p.w2(r, c), grads.w2(r, c));
  for (int r = 0; r < hidden; ++r)
    check_param(p.b1[static_cast<std::size_t>(r)], grads.b1[static_cast<std::size_t>(r)]);
  for (int r = 0; r < embed; ++r)
    check_param(p.b2[static_cast<std::size_t>(r)], grads.b2[static_cast<std::size_t>(r)]);
  CHECK(worst <= 1e-6);
}

TEST_CASE("teacher EMA blends every parameter array") {
  Rng rng(3);
  EncoderParams student = EncoderParams::init(4, 5, 3, rng);
  EncoderParams teacher = EncoderParams::init(4, 5, 3, rng);
  const EncoderParams before = teacher;
  ema_params(teacher, student, 0.75);
  for (std::size_t i = 0; i < teacher.w1.values().size(); ++i) {
    CHECK(teacher.w1.values()[i] ==
          doctest::Approx(0.75 * before.w1.values()[i] + 0.25 * student.w1.values()[i])
              .epsilon(1e-15));
  }
  for (std::size_t i = 0; i < teacher.b2.size(); ++i) {
    CHECK(teacher.b2[i] ==
          doctest::Approx(0.75 * before.b2[i] + 0.25 * student.b2[i]).epsilon(1e-15));
  }
  // rho = 1 freezes the teacher entirely
  EncoderParams frozen = before;
  ema_params(frozen, student, 1.0);
  for (std::size_t i = 0; i < frozen.w2.values().size(); ++i) {
    CHECK(frozen.w2.values()[i] == before.w2.values()[i]);
  }
}

TEST_CASE("matching-gap training lifts the linear probe on synthetic clusters") {
  SyntheticTrainConfig cfg;  // committed defaults: 8 clusters, 3 views, m3g
  cfg.epochs = 200;
  cfg.seed = 0;
  const TrainMetrics m = run_train(cfg);
  CHECK(m.probe_accuracy >= 0.9);
  CHECK(m.probe_accuracy >= m.baseline_accuracy + 0.1);
  CHECK(m.view_alignment > 0.5);
  REQUIRE(m.epoch_losses.size() == 200);
  CHECK(m.final_loss < m.epoch_losses.front());
  for (double l : m.epoch_losses) CHECK(std::isfinite(l));
}

TEST_CASE("matching-gap and pairwise InfoNCE both learn at an identical budget") {
  // Smoke parity at the same epoch/batch budget (per-loss learning rates),
  // not a claim that either objective dominates the other.
  SyntheticTrainConfig cfg;
  cfg.epochs = 150;
  cfg.seed = 0;
  const TrainMetrics gap = run_train(cfg);

  cfg.loss = TrainLoss::infonce_pwe;
  cfg.learning_rate = 0.5;
  const TrainMetrics nce = run_train(cfg);

  CHECK(gap.probe_accuracy >= 0.8);
  CHECK(nce.probe_accuracy >= 0.8);
  CHECK(nce.final_loss < nce.epoch_losses.front());
}

TEST_CASE("zero learning rate reproduces the untrained baseline") {
  SyntheticTrainConfig idle;
  idle.epochs = 3;
  idle.learning_rate = 0.0;
  idle.seed = 5;
  const TrainMetrics moved = run_train(idle);
  SyntheticTrainConfig frozen = idle;
  frozen.epochs = 0;
  const TrainMetrics still = run_train(frozen);
  CHECK(moved.probe_accuracy == still.probe_accuracy);
  CHECK(moved.probe_accuracy == moved.baseline_accuracy);
  CHECK(moved.view_alignment == still.view_alignment);
  CHECK(moved.epoch_losses.size() == 3);
  CHECK(still.epoch_losses.empty());
  CHECK(still.final_loss == 0.0);
}

TEST_CASE("training runs are reproducible per seed") {
  SyntheticTrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 9;
  const TrainMetrics a = run_train(cfg);
  const TrainMetrics b = run_train(cfg);
  CHECK(a.final_loss == b.final_loss);
  CHECK(a.probe_accuracy == b.probe_accuracy);
  CHECK(a.view_alignment == b.view_alignment);
  REQUIRE(a.epoch_losses.size() == b.epoch_losses.size());
  for (std::size_t i = 0; i < a.epoch_losses.size(); ++i) {
    CHECK(a.epoch_losses[i] == b.epoch_losses[i]);
  }
}

TEST_CASE("training configuration validation names the offending field") {
  SyntheticTrainConfig cfg;
  cfg.clusters = 1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("clusters"), std::invalid_argument);
  cfg = SyntheticTrainConfig{};
  cfg.views = 1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("views"), std::invalid_argument);
  cfg = SyntheticTrainConfig{};
  cfg.input_dim = 4;  // fewer than the 8 default clusters
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("input_dim"), std::invalid_argument);
  cfg = SyntheticTrainConfig{};
  cfg.batch = 1000;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("batch"), std::invalid_argument);
  cfg = SyntheticTrainConfig{};
  cfg.ema_rho = 1.5;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("ema_rho"), std::invalid_argument);
  cfg = SyntheticTrainConfig{};
  cfg.views = 30;  // 16^30 points blows the tensor element cap
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_THROWS_WITH_AS(train_loss_from_name("contrastive"), doctest::Contains("loss"),
                       std::invalid_argument);
  CHECK(train_loss_from_name("byol_ave") == TrainLoss::byol_ave);
  CHECK(std::string(train_loss_name(TrainLoss::infonce_ave)) == "infonce_ave");
}

TEST_CASE("bench micro grid: records, streaming order, and monotone iterations") {
  BenchOptions opt;
  opt.ns = {4, 8};
  opt.ks = {2, 3};
  opt.epsilons = {0.1, 1.0};
  opt.tolerance = 1e-4;
  opt.max_iterations = 200;
  opt.seed = 2;
  std::vector<BenchRecord> streamed;
  opt.on_record = [&streamed](const BenchRecord& r) { streamed.push_back(r); };
  const BenchSummary s = run_bench(opt);
  REQUIRE(s.records.size() == 8);
  CHECK(s.skipped.empty());
  CHECK(s.iterations_monotone);
  REQUIRE(streamed.size() == 8);
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    CHECK(streamed[i].n == s.records[i].n);
    CHECK(streamed[i].k == s.records[i].k);
    CHECK(streamed[i].epsilon == s.records[i].epsilon);
    CHECK(streamed[i].iterations == s.records[i].iterations);
  }
  for (const BenchRecord& r : s.records) {
    CHECK(r.converged);
    CHECK(r.delta < 1e-4);
    CHECK(r.wall_time_s >= 0.0);
  }
  // per cell, the sharper regularization needs at least as many sweeps
  for (std::size_t i = 0; i + 1 < s.records.size(); i += 2) {
    CHECK(s.records[i].epsilon == 0.1);
    CHECK(s.records[i + 1].epsilon == 1.0);
    CHECK(s.records[i].iterations >= s.records[i + 1].iterations);
  }
}

TEST_CASE("bench skips cells over the tensor element cap with a note") {
  BenchOptions opt;
  opt.ns = {4};
  opt.ks = {2, 20};  // 4^20 is far over the cap
  opt.epsilons = {0.5};
  const BenchSummary s = run_bench(opt);
  REQUIRE(s.records.size() == 1);
  CHECK(s.records.front().k == 2);
  REQUIRE(s.skipped.size() == 1);
  CHECK(s.skipped.front().n == 4);
  CHECK(s.skipped.front().k == 20);
  CHECK(s.skipped.front().reason.find("cap") != std::string::npos);
}

TEST_CASE("bench CSV carries one row per record plus a header") {
  BenchOptions opt;
  opt.ns = {4};
  opt.ks = {2};
  opt.epsilons = {0.5, 1.0};
  const BenchSummary s = run_bench(opt);
  const std::string csv = bench_csv(s);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.rfind("n,k,epsilon,iterations,delta,converged,wall_time_s\n", 0) == 0);
  const std::string first_row = csv.substr(csv.find('\n') + 1);
  CHECK(first_row.rfind("4,2,0.5,", 0) == 0);
  CHECK(std::count(first_row.begin(), first_row.begin() + static_cast<long>(first_row.find('\n')),
                   ',') == 6);
}

TEST_CASE("bench option validation names the offending field") {
  BenchOptions opt;
  opt.ns.clear();
  CHECK_THROWS_WITH_AS(opt.validate(), doctest::Contains("ns"), std::invalid_argument);
  opt = BenchOptions{};
  opt.ks = {1};
  CHECK_THROWS_WITH_AS(opt.validate(), doctest::Contains("k"), std::invalid_argument);
  opt = BenchOptions{};
  opt.epsilons = {0.0};
  CHECK_THROWS_WITH_AS(opt.validate(), doctest::Contains("epsilon"), std::invalid_argument);
  opt = BenchOptions{};
  opt.max_iterations = 0;
  CHECK_THROWS_WITH_AS(opt.validate(), doctest::Contains("max_iterations"),
                       std::invalid_argument);
}
