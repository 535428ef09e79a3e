// SPDX-License-Identifier: Apache-2.0
// Shared builders for the test suites.
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "headscope/corpus.hpp"
#include "headscope/metrics.hpp"
#include "headscope/transformer.hpp"

namespace fixtures {

using Rows = std::vector<std::vector<double>>;

headscope::AttentionMatrix make_matrix(const headscope::MatrixKey& key, const Rows& rows);

/// n × n with row t one-hot at column t + offsets[t].
headscope::AttentionMatrix shift_matrix(const headscope::MatrixKey& key, const std::vector<int>& offsets);

headscope::AttentionMatrix uniform_matrix(const headscope::MatrixKey& key, std::size_t rows, std::size_t cols);

/// Random row-stochastic matrix; with `causal`, row t covers keys 0..t.
headscope::AttentionMatrix random_matrix(const headscope::MatrixKey& key, std::size_t rows, std::size_t cols,
                                         std::mt19937_64& rng, bool causal = false);

headscope::Token tok(std::string text, headscope::UposTag pos, headscope::NeClass ne = headscope::NeClass::NONE);

/// Tokens with random POS tags and exactly round(length × fraction) entities.
std::vector<headscope::Token> random_tokens(std::size_t length, double fraction, std::mt19937_64& rng);

/// Article with random tokens and a full grid of random matrices.
headscope::AnnotatedArticle random_article(const std::string& id, std::size_t source_len, std::size_t summary_len,
                                           int n_layers, int n_heads, std::mt19937_64& rng);

/// The hand-built 20-token article: mixed tags, four entity classes, and one
/// ENC_SELF 20 × 20 matrix with a known argmax pattern.
headscope::AnnotatedArticle hand_article();

/// A scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// write_dump then load_corpus.
headscope::Corpus round_trip(const std::vector<headscope::AnnotatedArticle>& articles, const std::filesystem::path& dir);

/// 2 layers, 2 heads, d_model 32, vocab 50, seed 42.
headscope::ModelConfig tiny_config();

/// 4 layers, 8 heads, d_model 64, vocab 101, seed 42.
headscope::ModelConfig default_config();

/// Copy of `model` whose `key` head (DEC_CROSS) has W_V = 0 and b_V = 0, so
/// every token's value is the same vector, and W_Q, W_K scaled by `sharpen`.
headscope::Model degenerate_model(const headscope::Model& model, const headscope::MatrixKey& key, double sharpen);

/// 2 layers × 3 heads of DEC_CROSS profiles; layer 1 head 2 carries
/// pos_kl 0.42 ± 0.14, top_pos PUNC 0.430 and top_ne PER 0.660.
std::vector<headscope::HeadProfile> report_fixture();

/// Toy next-token log-probabilities over 5 tokens (end symbol 4) with
/// hand-set logits; greedy decoding is not optimal on it.
inline constexpr int kToyEos = 4;
std::vector<double> toy_log_probs(std::span<const int> prefix);

std::string read_file(const std::filesystem::path& path);

}  // namespace fixtures
