// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "headscope/beam_search.hpp"
#include "headscope/corpus.hpp"
#include "headscope/tensor.hpp"

namespace headscope {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 8;
  int d_model = 64;
  int d_ff = 128;
  int vocab_size = 101;
  int max_positions = 512;
  std::uint64_t seed = 42;
  int bos_id = 0;
  int eos_id = 1;

  int d_k() const noexcept { return d_model / n_heads; }
  /// Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Projections map row vectors: y = x·W + b. A head's W_Q/W_K/W_V are
// d_model × d_k; the output projection is d_model × d_model.
struct HeadWeights {
  Matrix wq, wk, wv;
  std::vector<double> bq, bk, bv;
};

struct AttentionBlockWeights {
  std::vector<HeadWeights> heads;
  Matrix wo;
  std::vector<double> bo;
};

struct LayerNormWeights {
  std::vector<double> gamma, beta;
};

struct FeedForwardWeights {
  Matrix w1;  // d_model × d_ff
  std::vector<double> b1;
  Matrix w2;  // d_ff × d_model
  std::vector<double> b2;
};

struct EncoderLayerWeights {
  AttentionBlockWeights self_attn;
  LayerNormWeights ln1;
  FeedForwardWeights ffn;
  LayerNormWeights ln2;
};

struct DecoderLayerWeights {
  AttentionBlockWeights self_attn;
  LayerNormWeights ln1;
  AttentionBlockWeights cross_attn;
  LayerNormWeights ln2;
  FeedForwardWeights ffn;
  LayerNormWeights ln3;
};

struct ModelWeights {
  Matrix embedding;  // vocab × d_model, shared by encoder and decoder inputs
  std::vector<EncoderLayerWeights> encoder;
  std::vector<DecoderLayerWeights> decoder;
  Matrix out_proj;  // vocab × d_model
  std::vector<double> out_bias;

  /// Zero-filled weights shaped for `config`.
  static ModelWeights zeros(const ModelConfig& config);
  /// Matrices uniform in ±1/√d_model from a seeded generator; biases and
  /// LayerNorm shifts 0, LayerNorm scales 1.
  static ModelWeights random(const ModelConfig& config);
};

/// A view of one parameter tensor; vectors are reported as 1 × n.
struct TensorRef {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double* data = nullptr;
  enum class Kind { kMatrix, kBias, kScale } kind = Kind::kMatrix;
};

/// Every parameter of `w` in the canonical order used for initialization and
/// for the weight file.
std::vector<TensorRef> named_tensors(ModelWeights& w);

struct OverrideKey {
  AttentionType type = AttentionType::DEC_CROSS;
  int layer = 0;
  int head = 0;
  std::size_t row = 0;  // query position (decode step for decoder attention)

  auto operator<=>(const OverrideKey&) const = default;
};

/// Replacement attention rows, applied after the softmax and before the
/// value mixing. For causal (DEC_SELF) rows the vector covers keys 0..row.
///
/// With a decoder path set, decoder row r applies only to hypotheses whose
/// first r generated tokens equal the path's; other beams run unmodified.
/// Without one, decoder rows apply to every hypothesis.
class AttentionOverride {
 public:
  /// Throws OverrideShapeError unless `dist` is non-negative and sums to 1
  /// within 1e-9.
  void set(const OverrideKey& key, std::vector<double> dist);
  const std::vector<double>* find(const OverrideKey& key) const;
  bool empty() const noexcept { return rows_.empty(); }
  std::size_t size() const noexcept { return rows_.size(); }
  const std::map<OverrideKey, std::vector<double>>& rows() const noexcept { return rows_; }

  void set_decoder_path(std::vector<int> tokens) { path_ = std::move(tokens); }
  const std::optional<std::vector<int>>& decoder_path() const noexcept { return path_; }
  /// Decoder rows below the returned index apply to `generated`.
  std::size_t decoder_row_limit(std::span<const int> generated) const noexcept;

 private:
  std::map<OverrideKey, std::vector<double>> rows_;
  std::optional<std::vector<int>> path_;
};

using AttentionMaps = std::map<MatrixKey, Matrix>;

struct AttentionResult {
  Matrix context;
  Matrix weights;
};

/// Row-softmax of Q·Kᵀ/√d_k. With `causal`, row i only sees keys j <= i and
/// the masked entries are exactly 0.
Matrix attention_weights(const Matrix& q, const Matrix& k, bool causal = false);
/// weights · V, honoring the causal key range when `causal`.
Matrix mix_values(const Matrix& weights, const Matrix& v, bool causal = false);
/// softmax(Q·Kᵀ/√d_k)·V.
AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v, bool causal = false);

struct HeadContext {
  AttentionType type = AttentionType::ENC_SELF;
  int layer = 0;
  bool causal = false;
  const AttentionOverride* override = nullptr;
  AttentionMaps* recorder = nullptr;
  std::size_t override_rows = std::numeric_limits<std::size_t>::max();  // rows at or past this run unmodified
};

/// All heads of one attention block, concatenated and projected. Overrides
/// replace a head's softmax rows before the value mixing; the recorder sees
/// the post-override weights.
Matrix multi_head(const Matrix& query_states, const Matrix& kv_states, const AttentionBlockWeights& block,
                  const HeadContext& ctx);

Matrix sinusoidal_positions(std::size_t length, std::size_t d_model);

struct EncoderOutput {
  Matrix states;
  AttentionMaps attention;  // ENC_SELF, one square matrix per (layer, head)
};

struct DecoderPass {
  Matrix logits;            // one row per decoder input position
  AttentionMaps attention;  // DEC_SELF and DEC_CROSS, filled when recording
};

struct TopEntry {
  int token = 0;
  double prob = 0.0;
};

struct DecodeResult {
  std::vector<int> tokens;  // generated tokens (start symbol excluded)
  double log_prob = 0.0;
  double score = 0.0;
  AttentionMaps attention;  // DEC_SELF and DEC_CROSS along the winning beam
  std::vector<std::vector<double>> step_logits;
  std::vector<std::vector<double>> step_probs;
  std::vector<std::vector<TopEntry>> top_k;  // per step, sorted descending
};

/// Output distribution over the vocabulary; the start symbol gets 0.
std::vector<double> output_probabilities(std::span<const double> logits, int bos_id);
std::vector<double> output_log_probabilities(std::span<const double> logits, int bos_id);
std::vector<TopEntry> top_k_entries(std::span<const double> probs, std::size_t k);

class Model {
 public:
  /// Throws ConfigError / ShapeError on inconsistent shapes or non-finite values.
  Model(ModelConfig config, ModelWeights weights);
  static Model random(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  const ModelWeights& weights() const noexcept { return weights_; }

  EncoderOutput encode(std::span<const int> tokens, const AttentionOverride* override = nullptr) const;

  /// Teacher-forced decoder pass over `decoder_input` (which starts with the
  /// start symbol). Row t of the result depends only on positions <= t.
  DecoderPass decode_forced(const EncoderOutput& encoded, std::span<const int> decoder_input,
                            const AttentionOverride* override = nullptr, bool record = false) const;

  /// Output distribution after `generated` (start symbol implicit).
  std::vector<double> next_token_probs(const EncoderOutput& encoded, std::span<const int> generated,
                                       const AttentionOverride* override = nullptr) const;

  DecodeResult beam_decode(const EncoderOutput& encoded, const BeamConfig& beam,
                           const AttentionOverride* override = nullptr) const;

  /// The winning-path record (attention, logits, top-k) for a given output.
  DecodeResult replay(const EncoderOutput& encoded, std::span<const int> tokens, std::size_t top_k,
                      const AttentionOverride* override = nullptr) const;

 private:
  void check_tokens(std::span<const int> tokens) const;

  ModelConfig config_;
  ModelWeights weights_;
};

/// Weight file: "HSWEIGHT", u64 LE header length, JSON header (config,
/// tensor names and shapes), then float32 LE tensors in canonical order.
void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path);

}  // namespace headscope
