#include "polymatch/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>

#include "polymatch/errors.hpp"
#include "polymatch/pairwise.hpp"

namespace polymatch {

EncoderParams EncoderParams::init(int in, int hidden, int embed, Rng& rng) {
  EncoderParams p;
  p.w1 = Mat(hidden, in);
  p.w2 = Mat(embed, hidden);
  p.b1.assign(static_cast<std::size_t>(hidden), 0.0);
  p.b2.assign(static_cast<std::size_t>(embed), 0.0);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : p.w1.values_mut()) v = rng.uniform(-a1, a1);
  const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (double& v : p.w2.values_mut()) v = rng.uniform(-a2, a2);
  return p;
}

EncoderGrads::EncoderGrads(const EncoderParams& p)
    : w1(p.w1.rows(), p.w1.cols()),
      w2(p.w2.rows(), p.w2.cols()),
      b1(p.b1.size(), 0.0),
      b2(p.b2.size(), 0.0) {}

Mat encoder_forward(const EncoderParams& p, const Mat& in, ForwardCache* cache) {
  const int n = in.rows();
  const int hidden = p.w1.rows();
  const int embed = p.w2.rows();
  Mat h(n, hidden), y(n, embed);
  std::vector<double> norms(static_cast<std::size_t>(n), 0.0);
  for (int r = 0; r < n; ++r) {
    const std::span<const double> xr = in.row(r);
    for (int j = 0; j < hidden; ++j) {
      double s = p.b1[static_cast<std::size_t>(j)];
      const std::span<const double> w = p.w1.row(j);
      for (std::size_t q = 0; q < xr.size(); ++q) s += w[q] * xr[q];
      h(r, j) = std::tanh(s);
    }
    double norm_sq = 0.0;
    for (int j = 0; j < embed; ++j) {
      double s = p.b2[static_cast<std::size_t>(j)];
      const std::span<const double> w = p.w2.row(j);
      for (int q = 0; q < hidden; ++q) s += w[q] * h(r, q);
      y(r, j) = s;
      norm_sq += s * s;
    }
    const double norm = std::sqrt(norm_sq);
    if (!(norm > 1e-15) || !std::isfinite(norm)) {
      throw NumericalError("encoder: output row " + std::to_string(r) +
                           " has no direction to renormalize");
    }
    for (int j = 0; j < embed; ++j) y(r, j) /= norm;
    norms[static_cast<std::size_t>(r)] = norm;
  }
  if (cache) {
    cache->x = in;
    cache->h = std::move(h);
    cache->y = y;
    cache->norm = std::move(norms);
  }
  return y;
}

void encoder_backward(const EncoderParams& p, const ForwardCache& c, const Mat& gy,
                      EncoderGrads& g) {
  const int n = c.y.rows();
  const int hidden = p.w1.rows();
  const int embed = p.w2.rows();
  const int in_dim = p.w1.cols();
  std::vector<double> gu(static_cast<std::size_t>(embed));
  std::vector<double> gh(static_cast<std::size_t>(hidden));
  for (int r = 0; r < n; ++r) {
    const std::span<const double> yr = c.y.row(r);
    const std::span<const double> gyr = gy.row(r);
    double dot = 0.0;
    for (int j = 0; j < embed; ++j) dot += gyr[j] * yr[j];
    const double inv_norm = 1.0 / c.norm[static_cast<std::size_t>(r)];
    for (int j = 0; j < embed; ++j)
      gu[static_cast<std::size_t>(j)] = (gyr[j] - dot * yr[j]) * inv_norm;
    std::fill(gh.begin(), gh.end(), 0.0);
    for (int j = 0; j < embed; ++j) {
      const double gj = gu[static_cast<std::size_t>(j)];
      g.b2[static_cast<std::size_t>(j)] += gj;
      const std::span<const double> w = p.w2.row(j);
      for (int q = 0; q < hidden; ++q) {
        g.w2(j, q) += gj * c.h(r, q);
        gh[static_cast<std::size_t>(q)] += w[q] * gj;
      }
    }
    const std::span<const double> xr = c.x.row(r);
    for (int q = 0; q < hidden; ++q) {
      const double t = c.h(r, q);
      const double gq = gh[static_cast<std::size_t>(q)] * (1.0 - t * t);
      g.b1[static_cast<std::size_t>(q)] += gq;
      for (int e = 0; e < in_dim; ++e) g.w1(q, e) += gq * xr[e];
    }
  }
}

namespace {

void axpy(std::span<double> x, std::span<const double> g, double scale) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * g[i];
}

}  // namespace

void sgd_step(EncoderParams& p, const EncoderGrads& g, double lr) {
  axpy(p.w1.values_mut(), g.w1.values(), -lr);
  axpy(p.w2.values_mut(), g.w2.values(), -lr);
  axpy(p.b1, g.b1, -lr);
  axpy(p.b2, g.b2, -lr);
}

void ema_params(EncoderParams& teacher, const EncoderParams& student, double rho) {
  teacher.w1 = Mat::from_values(teacher.w1.rows(), teacher.w1.cols(),
                                ema_update(teacher.w1.values(), student.w1.values(), rho));
  teacher.w2 = Mat::from_values(teacher.w2.rows(), teacher.w2.cols(),
                                ema_update(teacher.w2.values(), student.w2.values(), rho));
  teacher.b1 = ema_update(teacher.b1, student.b1, rho);
  teacher.b2 = ema_update(teacher.b2, student.b2, rho);
}

}  // namespace polymatch
