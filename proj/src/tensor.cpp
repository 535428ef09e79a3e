// SPDX-License-Identifier: Apache-2.0
#include "headscope/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "headscope/error.hpp"

namespace headscope {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul inner dimensions differ: " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed inner dimensions differ: " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> bias) {
  Matrix out = matmul(x, w);
  if (bias.empty()) return out;
  if (bias.size() != out.cols()) throw ShapeError("bias length does not match the output width");
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  return out;
}

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  if (mx == -std::numeric_limits<double>::infinity()) throw ShapeError("softmax over a fully masked row");
  double z = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : row) v /= z;
}

}  // namespace headscope
