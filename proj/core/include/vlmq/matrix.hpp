// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace vlmq {

/// Dense row-major real matrix; the carrier for weights, activations and
/// Hessians. Entries are kept finite by every exported linalg operation.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double &at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> &data() { return data_; }
  const std::vector<double> &data() const { return data_; }

  std::vector<double> column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);

  Matrix transposed() const;
  bool same_shape(const Matrix &o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Exact bit-level equality (distinguishes -0.0 from 0.0; used by the
/// reduction-identity and determinism checks).
bool bitwise_equal(const Matrix &a, const Matrix &b);

bool all_finite(const Matrix &m);
bool all_finite(std::span<const double> v);

} // namespace vlmq
