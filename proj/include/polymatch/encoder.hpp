#pragma once

#include <vector>

#include "polymatch/matrix.hpp"
#include "polymatch/rng.hpp"

namespace polymatch {

/// Parameters of the two-layer spherical encoder used by the synthetic
/// training driver: affine, tanh, affine, then row renormalization onto the
/// unit sphere.
struct EncoderParams {
  Mat w1;                  ///< hidden x in
  Mat w2;                  ///< embed x hidden
  std::vector<double> b1;  ///< hidden
  std::vector<double> b2;  ///< embed

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static EncoderParams init(int in, int hidden, int embed, Rng& rng);
};

/// Parameter gradients, zero-initialized to the shapes of `p`.
struct EncoderGrads {
  Mat w1, w2;
  std::vector<double> b1, b2;

  explicit EncoderGrads(const EncoderParams& p);
};

/// Activations kept from a forward pass for backpropagation.
struct ForwardCache {
  Mat x;                     ///< inputs, n x in
  Mat h;                     ///< post-tanh hidden, n x hidden
  Mat y;                     ///< normalized outputs, n x embed
  std::vector<double> norm;  ///< pre-normalization output lengths
};

/// Embed a batch of rows: y = normalize(w2 tanh(w1 x + b1) + b2). Throws
/// NumericalError if an output row collapses to zero length. Pass `cache`
/// to keep what encoder_backward needs.
Mat encoder_forward(const EncoderParams& p, const Mat& in, ForwardCache* cache = nullptr);

/// Accumulate parameter gradients for d(loss)/d(outputs) `gy` into `g`.
/// The output normalization backpropagates as (I - y y^T) / ||u|| with u the
/// pre-normalization row; tanh contributes the usual 1 - h^2 factor.
void encoder_backward(const EncoderParams& p, const ForwardCache& c, const Mat& gy,
                      EncoderGrads& g);

/// In-place gradient step p -= lr * g.
void sgd_step(EncoderParams& p, const EncoderGrads& g, double lr);

/// Blend every parameter array as rho * teacher + (1 - rho) * student.
void ema_params(EncoderParams& teacher, const EncoderParams& student, double rho);

}  // namespace polymatch
