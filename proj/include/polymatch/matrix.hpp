#pragma once

#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace polymatch {

/// Dense row-major matrix of doubles. Plain storage with bounds-checked
/// construction; the numerical routines live with the modules that use it.
class Mat {
 public:
  Mat() = default;

  Mat(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Mat: negative dimension");
    v_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
  }

  static Mat from_values(int rows, int cols, std::vector<double> values) {
    Mat m(rows, cols);
    if (values.size() != m.v_.size())
      throw std::invalid_argument("Mat::from_values: value count does not match rows*cols");
    m.v_ = std::move(values);
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double operator()(int r, int c) const { return v_[index(r, c)]; }
  double& operator()(int r, int c) { return v_[index(r, c)]; }

  std::span<const double> row(int r) const {
    return {v_.data() + index(r, 0), static_cast<std::size_t>(cols_)};
  }
  std::span<double> row(int r) {
    return {v_.data() + index(r, 0), static_cast<std::size_t>(cols_)};
  }

  std::span<const double> values() const { return v_; }
  std::span<double> values_mut() { return v_; }

 private:
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) +
           static_cast<std::size_t>(c);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
};

}  // namespace polymatch
