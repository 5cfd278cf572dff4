#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace polymatch {

/// Shape of a dense order-k tensor with every axis of length n.
///
/// Flat storage is row-major with axis 1 slowest and axis k fastest:
/// flat(i_1, ..., i_k) = sum_l i_l * n^(k-l) for 0-based element indices.
/// Axis arguments throughout the public API are 1-based (axis 1 ... axis k),
/// matching the usual notation for the views; element indices stay 0-based.
struct TensorShape {
  int k = 0;
  int n = 0;

  /// Validated constructor: requires k >= 1, n >= 1 and
  /// n^k <= tensor_element_cap().
  static TensorShape of(int k, int n);

  std::size_t element_count() const;

  bool operator==(const TensorShape&) const = default;
};

/// Process-wide guard against accidentally materialising astronomically
/// large tensors (n^k grows fast). Default cap: 2^28 elements (2 GiB of
/// doubles). Adjustable for machines with more or less memory.
std::size_t tensor_element_cap();
void set_tensor_element_cap(std::size_t cap);

/// Dense order-k tensor of doubles. Immutable once constructed: every
/// factory validates that all entries are finite, and only const access is
/// exposed afterwards. That makes sharing across threads safe by
/// construction.
class DenseTensor {
 public:
  static DenseTensor zeros(TensorShape shape);
  static DenseTensor filled(TensorShape shape, double value);

  /// Takes ownership of `values` (flat, row-major). Throws
  /// std::invalid_argument on a size mismatch and NumericalError if any
  /// entry is NaN or infinite.
  static DenseTensor from_values(TensorShape shape, std::vector<double> values);

  const TensorShape& shape() const { return shape_; }
  std::size_t size() const { return v_.size(); }
  std::span<const double> values() const { return v_; }

  /// Element access by 0-based multi-index (must supply exactly k indices).
  double at(std::span<const int> index) const;
  double at(std::initializer_list<int> index) const;

  /// The single entry of a fully reduced tensor (element_count() == 1).
  double scalar() const;

 private:
  DenseTensor(TensorShape shape, std::vector<double> values)
      : shape_(shape), v_(std::move(values)) {}

  // Internal factory that skips the finiteness check. Only log_sum_exp uses
  // it: reduced slices may legitimately carry +/-inf under the limit
  // conventions documented there.
  static DenseTensor unchecked(TensorShape shape, std::vector<double> values) {
    return DenseTensor(shape, std::move(values));
  }
  friend DenseTensor log_sum_exp(const DenseTensor&, std::span<const int>);

  TensorShape shape_;
  std::vector<double> v_;
};

/// Dual potentials F in R^(n x k): one length-n column per axis. Stored
/// column-major so each axis's potentials are contiguous. Unlike tensors
/// this is working state and stays mutable.
class PotentialMatrix {
 public:
  PotentialMatrix() = default;

  static PotentialMatrix zeros(int n, int k);

  /// Column-major values, i.e. k blocks of n doubles (axis 1 first).
  static PotentialMatrix from_values(int n, int k, std::vector<double> values);

  int n() const { return n_; }
  int k() const { return k_; }

  /// Potentials for one axis; `axis` is 1-based.
  std::span<const double> column(int axis) const;
  std::span<double> column_mut(int axis);

  std::span<const double> values() const { return v_; }

 private:
  int n_ = 0;
  int k_ = 0;
  std::vector<double> v_;
};

/// Marginal of `t` on one axis: out[j] = sum of all entries whose (1-based)
/// `axis` index equals j. Length-n result.
std::vector<double> marginal(const DenseTensor& t, int axis);

/// Direct sum of potentials: out(i_1,...,i_k) = sum_l f_l[i_l].
DenseTensor tensor_sum(const PotentialMatrix& f);

/// Log-sum-exp reduction over the given (1-based, distinct) axes, with the
/// usual max shift for stability. Remaining axes keep their original order;
/// reducing every axis yields a one-element tensor (see scalar()).
///
/// Empty slices follow the limit conventions: a slice of all -inf reduces
/// to -inf, and any +inf in a slice reduces to +inf. NaN anywhere raises
/// NumericalError.
DenseTensor log_sum_exp(const DenseTensor& t, std::span<const int> axes);
DenseTensor log_sum_exp(const DenseTensor& t, std::initializer_list<int> axes);

/// Frobenius inner product <a, b> = sum of elementwise products, accumulated
/// with fixed-order pairwise summation (deterministic for a given shape).
double inner(const DenseTensor& a, const DenseTensor& b);

}  // namespace polymatch
