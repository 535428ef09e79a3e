// SPDX-License-Identifier: Apache-2.0
#include "headscope/numeric.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <functional>
#include <mutex>
#include <system_error>
#include <thread>

namespace headscope {

MeanStd mean_std(std::span<const double> xs) noexcept {
  MeanStd out;
  out.n = xs.size();
  if (xs.empty()) return out;
  out.mean = compensated_sum(xs) / static_cast<double>(xs.size());
  if (xs.size() < 2) return out;
  CompensatedSum sq;
  for (double x : xs) {
    const double d = x - out.mean;
    sq.add(d * d);
  }
  out.std = std::sqrt(sq.value() / static_cast<double>(xs.size() - 1));
  return out;
}

std::string shortest_repr(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

namespace {

// Increments a string of decimal digits in place; returns true on overflow.
bool increment_digits(std::string& digits) {
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (*it == '9') {
      *it = '0';
    } else {
      ++*it;
      return false;
    }
  }
  return true;
}

}  // namespace

std::string format_fixed(double x, int decimals) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";

  char buf[512];
  auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::fixed);
  std::string s(buf, res.ptr);

  bool negative = false;
  if (!s.empty() && s[0] == '-') {
    negative = true;
    s.erase(0, 1);
  }
  std::string int_part = s;
  std::string frac_part;
  if (auto dot = s.find('.'); dot != std::string::npos) {
    int_part = s.substr(0, dot);
    frac_part = s.substr(dot + 1);
  }

  const auto keep = static_cast<std::size_t>(decimals);
  bool round_up = frac_part.size() > keep && frac_part[keep] >= '5';
  frac_part.resize(keep, '0');

  if (round_up) {
    std::string all = int_part + frac_part;
    if (increment_digits(all)) all.insert(all.begin(), '1');
    int_part = all.substr(0, all.size() - keep);
    frac_part = all.substr(all.size() - keep);
  }

  std::string out = int_part;
  if (decimals > 0) out += "." + frac_part;
  const bool is_zero = std::all_of(out.begin(), out.end(), [](char c) { return c == '0' || c == '.'; });
  if (negative && !is_zero) out.insert(out.begin(), '-');
  return out;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));

  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace headscope
