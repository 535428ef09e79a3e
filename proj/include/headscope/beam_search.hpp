// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace headscope {

struct BeamConfig {
  int beam_size = 4;
  int max_len = 16;
  /// Exponent of ((5 + len) / 6)^alpha; 0 disables the penalty.
  double length_penalty = 0.0;
};

/// Log-probabilities of the next token given the tokens generated so far
/// (the start symbol is implicit). Tokens with -inf are never expanded.
using StepScorer = std::function<std::vector<double>(std::span<const int> prefix)>;

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens, including the end symbol if emitted
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / length_penalty(tokens.size())
};

double length_penalty(std::size_t length, double alpha);

/// Standard beam search. Each step expands every live hypothesis over the
/// whole vocabulary and keeps the `beam_size` best candidates by cumulative
/// log-probability (ties: earlier beam, then smaller token id). Candidates
/// ending in `eos_id`, and survivors at `max_len`, become finished; the
/// winner is the finished hypothesis with the best length-normalized score
/// (ties: first finished).
Hypothesis beam_search(const StepScorer& scorer, int eos_id, const BeamConfig& config);

/// Argmax decoding (ties: smaller token id), stopping at `eos_id` or `max_len`.
Hypothesis greedy_search(const StepScorer& scorer, int eos_id, int max_len, double alpha = 0.0);

}  // namespace headscope
