#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mexit/errors.hpp"

namespace mexit {

/// Dense row-major matrix of doubles. Column vectors are shaped n x 1.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw invalid_input("Matrix: data length does not match rows*cols");
    }
  }

  static Matrix column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Matrix(n, 1, std::move(values));
  }

  static Matrix scalar(double v) { return Matrix(1, 1, {v}); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// w (m x n) * x (n x 1) -> (m x 1)
inline Matrix matvec(const Matrix& w, const Matrix& x) {
  if (x.cols() != 1 || w.cols() != x.rows()) {
    throw invalid_input("matvec: shape mismatch");
  }
  Matrix out(w.rows(), 1);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) {
      acc += w.at(r, c) * x[c];
    }
    out[r] = acc;
  }
  return out;
}

}  // namespace mexit
