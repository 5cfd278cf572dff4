#include "polymatch/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "polymatch/costs.hpp"
#include "polymatch/encoder.hpp"
#include "polymatch/errors.hpp"
#include "polymatch/m3g.hpp"
#include "polymatch/matrix.hpp"
#include "polymatch/pairwise.hpp"
#include "polymatch/rng.hpp"
#include "polymatch/solver.hpp"
#include "polymatch/tensor.hpp"

namespace polymatch {

namespace {

/// Held-out samples per cluster used for the probe and alignment metrics.
constexpr int kEvalPerCluster = 8;
constexpr double kProbeLearningRate = 1.0;
constexpr int kProbeIterations = 800;

/// Solver settings for the matching-gap loss inside the training loop. SGD
/// tolerates mildly approximate couplings, so the tolerance trades accuracy
/// for step rate.
constexpr double kTrainSolverTolerance = 1e-5;
constexpr int kTrainSolverSweeps = 500;

void axpy(std::span<double> x, std::span<const double> g, double scale) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * g[i];
}

/// Mutually orthogonal unit cluster centers (Gram-Schmidt on normal draws).
Mat orthonormal_centers(int clusters, int dim, Rng& rng) {
  Mat centers(clusters, dim);
  for (int i = 0; i < clusters; ++i) {
    for (;;) {
      std::span<double> row = centers.row(i);
      for (double& v : row) v = rng.normal();
      for (int j = 0; j < i; ++j) {
        const std::span<const double> prev =
            static_cast<const Mat&>(centers).row(j);
        double dot = 0.0;
        for (int q = 0; q < dim; ++q) dot += row[q] * prev[q];
        for (int q = 0; q < dim; ++q) row[q] -= dot * prev[q];
      }
      double norm_sq = 0.0;
      for (double v : row) norm_sq += v * v;
      const double norm = std::sqrt(norm_sq);
      if (norm > 1e-6) {
        for (double& v : row) v /= norm;
        break;
      }
    }
  }
  return centers;
}

/// center (or base point) + noise * gaussian, renormalized to the sphere.
void sample_on_sphere(std::span<const double> around, double noise, Rng& rng,
                      std::span<double> out) {
  double norm_sq = 0.0;
  for (std::size_t q = 0; q < out.size(); ++q) {
    out[q] = around[q] + noise * rng.normal();
    norm_sq += out[q] * out[q];
  }
  const double norm = std::sqrt(norm_sq);
  if (!(norm > 1e-15)) throw NumericalError("train: sampled point collapsed to zero length");
  for (double& v : out) v /= norm;
}

double loss_and_gradient(const SyntheticTrainConfig& cfg, const EmbeddingBatch& x,
                         GradientBatch& g) {
  switch (cfg.loss) {
    case TrainLoss::m3g: {
      SolverConfig s;
      s.epsilon = cfg.epsilon;
      s.tolerance = kTrainSolverTolerance;
      s.max_iterations = kTrainSolverSweeps;
      M3GEvaluation ev = m3g_with_gradient(x, MultiwayCost::circular_variance(), s);
      g = std::move(ev.gradient);
      return ev.result.loss;
    }
    case TrainLoss::infonce_pwe:
      return aggregate_with_gradient(x, PairwiseLossKind::infonce(cfg.tau),
                                     AggregationKind::pwe, false, g);
    case TrainLoss::infonce_ave:
      return aggregate_with_gradient(x, PairwiseLossKind::infonce(cfg.tau),
                                     AggregationKind::ave, false, g);
    case TrainLoss::byol_pwe:
      return aggregate_with_gradient(x, PairwiseLossKind::byol(), AggregationKind::pwe,
                                     false, g);
    case TrainLoss::byol_ave:
      return aggregate_with_gradient(x, PairwiseLossKind::byol(), AggregationKind::ave,
                                     false, g);
  }
  throw std::invalid_argument("train: unknown loss kind");
}

/// Multinomial-regression probe: fit on the first train_n feature rows by
/// full-batch gradient descent, score top-1 accuracy on the eval rows.
double probe_accuracy_of(const Mat& feats, const std::vector<int>& labels, int train_n,
                         int eval_n, int classes) {
  const int d = feats.cols();
  Mat w(classes, d);
  std::vector<double> b(static_cast<std::size_t>(classes), 0.0);
  std::vector<double> logits(static_cast<std::size_t>(classes));
  auto fill_logits = [&](int r) {
    for (int c = 0; c < classes; ++c) {
      double s = b[static_cast<std::size_t>(c)];
      const std::span<const double> wr = w.row(c);
      const std::span<const double> fr = feats.row(r);
      for (int q = 0; q < d; ++q) s += wr[q] * fr[q];
      logits[static_cast<std::size_t>(c)] = s;
    }
  };
  for (int it = 0; it < kProbeIterations; ++it) {
    Mat gw(classes, d);
    std::vector<double> gb(static_cast<std::size_t>(classes), 0.0);
    for (int r = 0; r < train_n; ++r) {
      fill_logits(r);
      const double peak = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double v : logits) z += std::exp(v - peak);
      for (int c = 0; c < classes; ++c) {
        const double p = std::exp(logits[static_cast<std::size_t>(c)] - peak) / z;
        const double resid = p - (labels[static_cast<std::size_t>(r)] == c ? 1.0 : 0.0);
        gb[static_cast<std::size_t>(c)] += resid;
        const std::span<const double> fr = feats.row(r);
        for (int q = 0; q < d; ++q) gw(c, q) += resid * fr[q];
      }
    }
    const double scale = kProbeLearningRate / train_n;
    axpy(w.values_mut(), gw.values(), -scale);
    axpy(b, gb, -scale);
  }
  int correct = 0;
  for (int r = train_n; r < train_n + eval_n; ++r) {
    fill_logits(r);
    const int guess = static_cast<int>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (guess == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / eval_n;
}

}  // namespace

const char* train_loss_name(TrainLoss loss) {
  switch (loss) {
    case TrainLoss::m3g: return "m3g";
    case TrainLoss::infonce_pwe: return "infonce_pwe";
    case TrainLoss::infonce_ave: return "infonce_ave";
    case TrainLoss::byol_pwe: return "byol_pwe";
    case TrainLoss::byol_ave: return "byol_ave";
  }
  return "unknown";
}

TrainLoss train_loss_from_name(const std::string& name) {
  for (TrainLoss loss : {TrainLoss::m3g, TrainLoss::infonce_pwe, TrainLoss::infonce_ave,
                         TrainLoss::byol_pwe, TrainLoss::byol_ave}) {
    if (name == train_loss_name(loss)) return loss;
  }
  throw std::invalid_argument(
      "train: loss must be one of m3g, infonce_pwe, infonce_ave, byol_pwe, byol_ave; got \"" +
      name + "\"");
}

void SyntheticTrainConfig::validate() const {
  if (clusters < 2)
    throw std::invalid_argument("SyntheticTrainConfig: clusters must be >= 2");
  if (samples_per_cluster < 1)
    throw std::invalid_argument("SyntheticTrainConfig: samples_per_cluster must be >= 1");
  if (views < 2) throw std::invalid_argument("SyntheticTrainConfig: views must be >= 2");
  if (input_dim < clusters) {
    throw std::invalid_argument(
        "SyntheticTrainConfig: input_dim must be >= clusters (centers are orthogonal), got " +
        std::to_string(input_dim) + " < " + std::to_string(clusters));
  }
  if (hidden_dim < 1) throw std::invalid_argument("SyntheticTrainConfig: hidden_dim must be >= 1");
  if (embed_dim < 1) throw std::invalid_argument("SyntheticTrainConfig: embed_dim must be >= 1");
  if (!(base_noise >= 0.0) || !std::isfinite(base_noise))
    throw std::invalid_argument("SyntheticTrainConfig: base_noise must be >= 0 and finite");
  if (!(view_noise >= 0.0) || !std::isfinite(view_noise))
    throw std::invalid_argument("SyntheticTrainConfig: view_noise must be >= 0 and finite");
  if (epochs < 0) throw std::invalid_argument("SyntheticTrainConfig: epochs must be >= 0");
  if (batch < 1) throw std::invalid_argument("SyntheticTrainConfig: batch must be >= 1");
  if (batch > clusters * samples_per_cluster) {
    throw std::invalid_argument("SyntheticTrainConfig: batch (" + std::to_string(batch) +
                                ") exceeds the training-set size (" +
                                std::to_string(clusters * samples_per_cluster) + ")");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("SyntheticTrainConfig: learning_rate must be >= 0 and finite");
  if (!(ema_rho >= 0.0 && ema_rho <= 1.0))
    throw std::invalid_argument("SyntheticTrainConfig: ema_rho must lie in [0, 1]");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("SyntheticTrainConfig: epsilon must be positive and finite");
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("SyntheticTrainConfig: tau must be positive and finite");
  TensorShape::of(views, batch);  // every training step must fit the tensor cap
}

TrainMetrics run_train(const SyntheticTrainConfig& cfg) {
  cfg.validate();
  Rng base(cfg.seed);
  Rng data_rng = base.fork(1);
  Rng init_rng = base.fork(2);

  const int train_n = cfg.clusters * cfg.samples_per_cluster;
  const int eval_n = cfg.clusters * kEvalPerCluster;
  const Mat centers = orthonormal_centers(cfg.clusters, cfg.input_dim, data_rng);

  Mat points(train_n + eval_n, cfg.input_dim);
  std::vector<int> labels(static_cast<std::size_t>(train_n + eval_n), 0);
  int row = 0;
  for (int split = 0; split < 2; ++split) {
    const int per_cluster = split == 0 ? cfg.samples_per_cluster : kEvalPerCluster;
    for (int c = 0; c < cfg.clusters; ++c) {
      for (int s = 0; s < per_cluster; ++s, ++row) {
        sample_on_sphere(centers.row(c), cfg.base_noise, data_rng, points.row(row));
        labels[static_cast<std::size_t>(row)] = c;
      }
    }
  }

  EncoderParams student = EncoderParams::init(cfg.input_dim, cfg.hidden_dim,
                                              cfg.embed_dim, init_rng);
  EncoderParams teacher = student;

  TrainMetrics metrics;
  {
    const Mat feats = encoder_forward(student, points, nullptr);
    metrics.baseline_accuracy =
        probe_accuracy_of(feats, labels, train_n, eval_n, cfg.clusters);
  }

  const int steps_per_epoch = train_n / cfg.batch;
  std::vector<Mat> view_inputs(static_cast<std::size_t>(cfg.views),
                               Mat(cfg.batch, cfg.input_dim));
  std::vector<int> order(static_cast<std::size_t>(train_n));
  metrics.epoch_losses.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng aug = base.fork(0x1000 + static_cast<std::uint64_t>(epoch));
    // Deterministic reshuffle so every batch mixes clusters; the raw sample
    // order is cluster-major and would otherwise make each batch one cluster.
    for (int i = 0; i < train_n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = train_n - 1; i > 0; --i) {
      const auto j = aug.uniform_int(static_cast<std::uint64_t>(i) + 1);
      std::swap(order[static_cast<std::size_t>(i)], order[j]);
    }
    double loss_sum = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      for (int i = 0; i < cfg.batch; ++i) {
        const int sample = order[static_cast<std::size_t>(step * cfg.batch + i)];
        for (int v = 0; v < cfg.views; ++v) {
          sample_on_sphere(points.row(sample), cfg.view_noise, aug,
                           view_inputs[static_cast<std::size_t>(v)].row(i));
        }
      }
      std::vector<ForwardCache> caches(static_cast<std::size_t>(cfg.views - 1));
      std::vector<Mat> embeds;
      embeds.reserve(static_cast<std::size_t>(cfg.views));
      embeds.push_back(encoder_forward(teacher, view_inputs[0], nullptr));
      for (int v = 1; v < cfg.views; ++v) {
        embeds.push_back(encoder_forward(student, view_inputs[static_cast<std::size_t>(v)],
                                         &caches[static_cast<std::size_t>(v - 1)]));
      }
      const EmbeddingBatch xb = EmbeddingBatch::from_matrices(embeds);
      GradientBatch grad;
      const double loss = loss_and_gradient(cfg, xb, grad);
      if (!std::isfinite(loss)) {
        throw NumericalError("train: loss became non-finite at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step));
      }
      loss_sum += loss;

      EncoderGrads pgrads(student);
      Mat gy(cfg.batch, cfg.embed_dim);
      for (int v = 1; v < cfg.views; ++v) {  // view 1 is the teacher: no gradient
        for (int i = 0; i < cfg.batch; ++i) {
          const std::span<const double> gr = grad.row(v + 1, i);
          for (int q = 0; q < cfg.embed_dim; ++q) gy(i, q) = gr[q];
        }
        encoder_backward(student, caches[static_cast<std::size_t>(v - 1)], gy, pgrads);
      }
      sgd_step(student, pgrads, cfg.learning_rate);
      ema_params(teacher, student, cfg.ema_rho);
    }
    metrics.epoch_losses.push_back(loss_sum / steps_per_epoch);
  }
  if (!metrics.epoch_losses.empty()) metrics.final_loss = metrics.epoch_losses.back();

  {
    const Mat feats = encoder_forward(student, points, nullptr);
    metrics.probe_accuracy =
        probe_accuracy_of(feats, labels, train_n, eval_n, cfg.clusters);
  }

  // Alignment: embed k fresh noisy views of every held-out sample with the
  // student and average the pairwise cosines.
  {
    Rng eval_rng = base.fork(0x2000);
    Mat view_in(eval_n, cfg.input_dim);
    std::vector<Mat> view_embeds;
    view_embeds.reserve(static_cast<std::size_t>(cfg.views));
    for (int v = 0; v < cfg.views; ++v) {
      for (int r = 0; r < eval_n; ++r) {
        sample_on_sphere(points.row(train_n + r), cfg.view_noise, eval_rng,
                         view_in.row(r));
      }
      view_embeds.push_back(encoder_forward(student, view_in, nullptr));
    }
    double total = 0.0;
    int pairs = 0;
    for (int r = 0; r < eval_n; ++r) {
      for (int l = 0; l < cfg.views; ++l) {
        for (int m = l + 1; m < cfg.views; ++m) {
          const std::span<const double> a =
              view_embeds[static_cast<std::size_t>(l)].row(r);
          const std::span<const double> b =
              view_embeds[static_cast<std::size_t>(m)].row(r);
          double dot = 0.0;
          for (int q = 0; q < cfg.embed_dim; ++q) dot += a[q] * b[q];
          total += dot;
          ++pairs;
        }
      }
    }
    metrics.view_alignment = total / pairs;
  }
  return metrics;
}

}  // namespace polymatch
