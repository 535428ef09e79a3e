// SPDX-License-Identifier: Apache-2.0
#include "headscope/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "headscope/error.hpp"

namespace headscope {

namespace {

struct Candidate {
  double log_prob;
  std::size_t beam;
  int token;
};

void check_config(const BeamConfig& c) {
  if (c.beam_size < 1) throw ConfigError("beam size must be >= 1", {{"beam_size", c.beam_size}});
  if (c.max_len < 1) throw ConfigError("max_len must be >= 1", {{"max_len", c.max_len}});
}

}  // namespace

double length_penalty(std::size_t length, double alpha) {
  if (alpha == 0.0) return 1.0;
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

Hypothesis beam_search(const StepScorer& scorer, int eos_id, const BeamConfig& config) {
  check_config(config);
  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> finished;
  const auto k = static_cast<std::size_t>(config.beam_size);

  for (int step = 0; step < config.max_len && !live.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto log_probs = scorer(live[b].tokens);
      for (std::size_t v = 0; v < log_probs.size(); ++v) {
        if (log_probs[v] == -std::numeric_limits<double>::infinity()) continue;
        candidates.push_back({live[b].log_prob + log_probs[v], b, static_cast<int>(v)});
      }
    }
    const auto keep = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });

    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = candidates[i];
      Hypothesis h;
      h.tokens = live[c.beam].tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      if (c.token == eos_id || step + 1 == config.max_len) {
        h.score = h.log_prob / length_penalty(h.tokens.size(), config.length_penalty);
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }

  if (finished.empty()) throw ConfigError("beam search produced no hypothesis (scorer returned no finite scores)");
  auto best = finished.begin();
  for (auto it = finished.begin(); it != finished.end(); ++it) {
    if (it->score > best->score) best = it;
  }
  return *best;
}

Hypothesis greedy_search(const StepScorer& scorer, int eos_id, int max_len, double alpha) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1", {{"max_len", max_len}});
  Hypothesis h;
  for (int step = 0; step < max_len; ++step) {
    const auto log_probs = scorer(h.tokens);
    const auto it = std::max_element(log_probs.begin(), log_probs.end());
    if (it == log_probs.end() || *it == -std::numeric_limits<double>::infinity()) {
      throw ConfigError("greedy search: scorer returned no finite scores");
    }
    h.tokens.push_back(static_cast<int>(it - log_probs.begin()));
    h.log_prob += *it;
    if (h.tokens.back() == eos_id) break;
  }
  h.score = h.log_prob / length_penalty(h.tokens.size(), alpha);
  return h;
}

}  // namespace headscope
