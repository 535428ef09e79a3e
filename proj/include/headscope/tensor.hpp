// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace headscope {

/// Dense row-major matrix of doubles. Every product below computes each
/// output element as a left-to-right dot product, so a row's result never
/// depends on how many other rows are in the batch.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a (n×k) · b (k×m)
Matrix matmul(const Matrix& a, const Matrix& b);
/// a (n×k) · bᵀ where b is m×k
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
/// x · w + bias (bias broadcast over rows; may be empty)
Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias);

/// Numerically stable softmax of one row in place. Entries equal to -inf
/// get weight exactly 0.
void softmax_inplace(std::span<double> row);

}  // namespace headscope
