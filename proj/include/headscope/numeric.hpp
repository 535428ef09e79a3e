// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace headscope {

/// Neumaier-compensated accumulator. Used wherever a corpus-level reduction
/// must not drift with the number of terms.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) noexcept {
  CompensatedSum acc;
  for (double x : xs) acc.add(x);
  return acc.value();
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 when n < 2
  std::size_t n = 0;
};

/// Two-pass mean and sample standard deviation, both compensated.
MeanStd mean_std(std::span<const double> xs) noexcept;

/// x·ln(x/y) with the 0·ln 0 = 0 convention.
inline double xlogx_over_y(double x, double y) noexcept {
  if (x <= 0.0) return 0.0;
  return x * std::log(x / y);
}

/// Shortest decimal string that parses back to exactly `x`.
std::string shortest_repr(double x);

/// Fixed-point rendering with half-up rounding applied to the shortest
/// decimal representation of `x` (so 0.145 renders as "0.15" at 2 places).
std::string format_fixed(double x, int decimals);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items are
/// independent; results must be written to per-index slots by the caller.
/// If any item throws, the exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace headscope
