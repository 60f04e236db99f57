// SPDX-License-Identifier: Apache-2.0
#include "vlmq/matrix.hpp"

#include <cmath>
#include <cstring>

#include "vlmq/errors.hpp"

namespace vlmq {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
  : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
  : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeMismatch("matrix data length " + std::to_string(data_.size()) + " != " +
                        std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    m.at(i, i) = 1.0;
  }
  return m;
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    out[r] = at(r, c);
  }
  return out;
}

void Matrix::set_column(std::size_t c, std::span<const double> values) {
  if (values.size() != rows_) {
    throw ShapeMismatch("column length " + std::to_string(values.size()));
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    at(r, c) = values[r];
  }
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) {
      t.at(c, r) = at(r, c);
    }
  }
  return t;
}

bool bitwise_equal(const Matrix &a, const Matrix &b) {
  if (!a.same_shape(b)) {
    return false;
  }
  if (a.size() == 0) {
    return true;
  }
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      return false;
    }
  }
  return true;
}

bool all_finite(const Matrix &m) { return all_finite(std::span<const double>(m.data())); }

} // namespace vlmq
