#include "polymatch/tensor.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "detail/kernels.hpp"
#include "detail/sum.hpp"
#include "polymatch/errors.hpp"

namespace polymatch {

namespace {

std::atomic<std::size_t>& cap_storage() {
  static std::atomic<std::size_t> cap{std::size_t{1} << 28};
  return cap;
}

}  // namespace

std::size_t tensor_element_cap() { return cap_storage().load(); }

void set_tensor_element_cap(std::size_t cap) {
  if (cap == 0) throw std::invalid_argument("tensor element cap must be positive");
  cap_storage().store(cap);
}

TensorShape TensorShape::of(int k, int n) {
  if (k < 1) throw std::invalid_argument("TensorShape: k must be >= 1, got " + std::to_string(k));
  if (n < 1) throw std::invalid_argument("TensorShape: n must be >= 1, got " + std::to_string(n));
  // Overflow-safe n^k bound check against the process-wide element cap.
  const std::size_t cap = tensor_element_cap();
  std::size_t count = 1;
  for (int i = 0; i < k; ++i) {
    if (count > cap / static_cast<std::size_t>(n))
      throw std::invalid_argument("TensorShape: n^k exceeds the tensor element cap (n=" +
                                  std::to_string(n) + ", k=" + std::to_string(k) + ")");
    count *= static_cast<std::size_t>(n);
  }
  return TensorShape{k, n};
}

std::size_t TensorShape::element_count() const { return detail::pow_n(n, k); }

DenseTensor DenseTensor::zeros(TensorShape shape) {
  return DenseTensor(shape, std::vector<double>(shape.element_count(), 0.0));
}

DenseTensor DenseTensor::filled(TensorShape shape, double value) {
  if (!std::isfinite(value)) throw NumericalError("DenseTensor::filled: non-finite fill value");
  return DenseTensor(shape, std::vector<double>(shape.element_count(), value));
}

DenseTensor DenseTensor::from_values(TensorShape shape, std::vector<double> values) {
  if (values.size() != shape.element_count())
    throw std::invalid_argument("DenseTensor::from_values: expected " +
                                std::to_string(shape.element_count()) + " values, got " +
                                std::to_string(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw NumericalError("DenseTensor::from_values: non-finite value at flat index " +
                           std::to_string(i));
  }
  return DenseTensor(shape, std::move(values));
}

double DenseTensor::at(std::span<const int> index) const {
  if (static_cast<int>(index.size()) != shape_.k)
    throw std::invalid_argument("DenseTensor::at: expected " + std::to_string(shape_.k) +
                                " indices, got " + std::to_string(index.size()));
  std::size_t flat = 0;
  for (int a = 0; a < shape_.k; ++a) {
    const int i = index[static_cast<std::size_t>(a)];
    if (i < 0 || i >= shape_.n)
      throw std::invalid_argument("DenseTensor::at: index " + std::to_string(i) +
                                  " out of range for axis " + std::to_string(a + 1));
    flat = flat * static_cast<std::size_t>(shape_.n) + static_cast<std::size_t>(i);
  }
  return v_[flat];
}

double DenseTensor::at(std::initializer_list<int> index) const {
  return at(std::span<const int>(index.begin(), index.size()));
}

double DenseTensor::scalar() const {
  if (v_.size() != 1)
    throw std::invalid_argument("DenseTensor::scalar: tensor has " + std::to_string(v_.size()) +
                                " elements, expected 1");
  return v_[0];
}

PotentialMatrix PotentialMatrix::zeros(int n, int k) {
  if (n < 1 || k < 1) throw std::invalid_argument("PotentialMatrix: n and k must be >= 1");
  PotentialMatrix f;
  f.n_ = n;
  f.k_ = k;
  f.v_.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(k), 0.0);
  return f;
}

PotentialMatrix PotentialMatrix::from_values(int n, int k, std::vector<double> values) {
  PotentialMatrix f = zeros(n, k);
  if (values.size() != f.v_.size())
    throw std::invalid_argument("PotentialMatrix::from_values: expected " +
                                std::to_string(f.v_.size()) + " values, got " +
                                std::to_string(values.size()));
  for (double v : values)
    if (!std::isfinite(v)) throw NumericalError("PotentialMatrix::from_values: non-finite value");
  f.v_ = std::move(values);
  return f;
}

std::span<const double> PotentialMatrix::column(int axis) const {
  if (axis < 1 || axis > k_)
    throw std::invalid_argument("PotentialMatrix::column: axis " + std::to_string(axis) +
                                " out of range [1, " + std::to_string(k_) + "]");
  return {v_.data() + static_cast<std::size_t>(axis - 1) * static_cast<std::size_t>(n_),
          static_cast<std::size_t>(n_)};
}

std::span<double> PotentialMatrix::column_mut(int axis) {
  if (axis < 1 || axis > k_)
    throw std::invalid_argument("PotentialMatrix::column_mut: axis " + std::to_string(axis) +
                                " out of range [1, " + std::to_string(k_) + "]");
  return {v_.data() + static_cast<std::size_t>(axis - 1) * static_cast<std::size_t>(n_),
          static_cast<std::size_t>(n_)};
}

std::vector<double> marginal(const DenseTensor& t, int axis) {
  const auto& s = t.shape();
  if (axis < 1 || axis > s.k)
    throw std::invalid_argument("marginal: axis " + std::to_string(axis) + " out of range [1, " +
                                std::to_string(s.k) + "]");
  return detail::axis_marginal(t.values(), s.n, s.k, axis - 1);
}

DenseTensor tensor_sum(const PotentialMatrix& f) {
  const TensorShape shape = TensorShape::of(f.k(), f.n());
  std::vector<double> buf(shape.element_count(), 0.0);
  for (int a = 0; a < f.k(); ++a)
    detail::axis_add(buf, f.n(), f.k(), a, f.column(a + 1), 1.0);
  return DenseTensor::from_values(shape, std::move(buf));
}

DenseTensor log_sum_exp(const DenseTensor& t, std::span<const int> axes) {
  const auto& s = t.shape();
  std::vector<bool> reduce(static_cast<std::size_t>(s.k), false);
  for (int axis : axes) {
    if (axis < 1 || axis > s.k)
      throw std::invalid_argument("log_sum_exp: axis " + std::to_string(axis) +
                                  " out of range [1, " + std::to_string(s.k) + "]");
    if (reduce[static_cast<std::size_t>(axis - 1)])
      throw std::invalid_argument("log_sum_exp: duplicate axis " + std::to_string(axis));
    reduce[static_cast<std::size_t>(axis - 1)] = true;
  }

  const int kept = s.k - static_cast<int>(axes.size());
  // Strides of each source axis inside the reduced result (0 if reduced).
  std::vector<std::size_t> out_stride(static_cast<std::size_t>(s.k), 0);
  {
    std::size_t stride = 1;
    for (int a = s.k - 1; a >= 0; --a) {
      if (!reduce[static_cast<std::size_t>(a)]) {
        out_stride[static_cast<std::size_t>(a)] = stride;
        stride *= static_cast<std::size_t>(s.n);
      }
    }
  }
  const TensorShape out_shape =
      kept == 0 ? TensorShape::of(1, 1) : TensorShape::of(kept, s.n);
  const std::size_t out_size = out_shape.element_count();

  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> m(out_size, neg_inf);
  const std::span<const double> v = t.values();

  // Odometer walk over the source; out_flat tracks the reduced flat index
  // incrementally as digits roll over.
  std::vector<int> digit(static_cast<std::size_t>(s.k), 0);
  std::size_t out_flat = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i];
    if (std::isnan(x)) throw NumericalError("log_sum_exp: NaN in input tensor");
    if (m[out_flat] < x) m[out_flat] = x;
    for (int a = s.k - 1; a >= 0; --a) {
      auto& d = digit[static_cast<std::size_t>(a)];
      out_flat += out_stride[static_cast<std::size_t>(a)];
      if (++d < s.n) break;
      out_flat -= static_cast<std::size_t>(s.n) * out_stride[static_cast<std::size_t>(a)];
      d = 0;
    }
  }

  std::vector<detail::NeumaierSum> acc(out_size);
  std::fill(digit.begin(), digit.end(), 0);
  out_flat = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double mj = m[out_flat];
    if (std::isfinite(mj)) acc[out_flat].add(std::exp(v[i] - mj));
    for (int a = s.k - 1; a >= 0; --a) {
      auto& d = digit[static_cast<std::size_t>(a)];
      out_flat += out_stride[static_cast<std::size_t>(a)];
      if (++d < s.n) break;
      out_flat -= static_cast<std::size_t>(s.n) * out_stride[static_cast<std::size_t>(a)];
      d = 0;
    }
  }

  std::vector<double> out(out_size);
  for (std::size_t j = 0; j < out_size; ++j) {
    // -inf slices stay -inf; a +inf entry dominates its slice.
    out[j] = std::isfinite(m[j]) ? m[j] + std::log(acc[j].total()) : m[j];
  }
  // Bypass from_values: +/-inf results are legitimate here by the limit
  // conventions, so only the NaN case (already excluded) would be an error.
  return DenseTensor::unchecked(out_shape, std::move(out));
}

DenseTensor log_sum_exp(const DenseTensor& t, std::initializer_list<int> axes) {
  return log_sum_exp(t, std::span<const int>(axes.begin(), axes.size()));
}

double inner(const DenseTensor& a, const DenseTensor& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("inner: tensor shapes differ");
  return detail::pairwise_dot(a.values().data(), b.values().data(), a.size());
}

}  // namespace polymatch
