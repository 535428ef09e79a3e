// SPDX-License-Identifier: Apache-2.0
#include "headscope/transformer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "headscope/error.hpp"

namespace headscope {

using nlohmann::json;

namespace {

constexpr double kLayerNormEps = 1e-6;
constexpr char kWeightMagic[8] = {'H', 'S', 'W', 'E', 'I', 'G', 'H', 'T'};

Matrix zeros_like_head(int d_model, int d_k) { return Matrix(static_cast<std::size_t>(d_model), static_cast<std::size_t>(d_k)); }

AttentionBlockWeights zero_block(const ModelConfig& c) {
  AttentionBlockWeights b;
  const auto dk = static_cast<std::size_t>(c.d_k());
  for (int h = 0; h < c.n_heads; ++h) {
    HeadWeights hw;
    hw.wq = zeros_like_head(c.d_model, c.d_k());
    hw.wk = zeros_like_head(c.d_model, c.d_k());
    hw.wv = zeros_like_head(c.d_model, c.d_k());
    hw.bq.assign(dk, 0.0);
    hw.bk.assign(dk, 0.0);
    hw.bv.assign(dk, 0.0);
    b.heads.push_back(std::move(hw));
  }
  b.wo = Matrix(static_cast<std::size_t>(c.d_model), static_cast<std::size_t>(c.d_model));
  b.bo.assign(static_cast<std::size_t>(c.d_model), 0.0);
  return b;
}

LayerNormWeights unit_layer_norm(const ModelConfig& c) {
  return {std::vector<double>(static_cast<std::size_t>(c.d_model), 1.0),
          std::vector<double>(static_cast<std::size_t>(c.d_model), 0.0)};
}

FeedForwardWeights zero_ffn(const ModelConfig& c) {
  FeedForwardWeights f;
  f.w1 = Matrix(static_cast<std::size_t>(c.d_model), static_cast<std::size_t>(c.d_ff));
  f.b1.assign(static_cast<std::size_t>(c.d_ff), 0.0);
  f.w2 = Matrix(static_cast<std::size_t>(c.d_ff), static_cast<std::size_t>(c.d_model));
  f.b2.assign(static_cast<std::size_t>(c.d_model), 0.0);
  return f;
}

void add_block(std::vector<TensorRef>& out, const std::string& prefix, AttentionBlockWeights& b) {
  for (std::size_t h = 0; h < b.heads.size(); ++h) {
    auto& hw = b.heads[h];
    const auto p = prefix + ".head" + std::to_string(h);
    out.push_back({p + ".wq", hw.wq.rows(), hw.wq.cols(), hw.wq.data().data(), TensorRef::Kind::kMatrix});
    out.push_back({p + ".bq", 1, hw.bq.size(), hw.bq.data(), TensorRef::Kind::kBias});
    out.push_back({p + ".wk", hw.wk.rows(), hw.wk.cols(), hw.wk.data().data(), TensorRef::Kind::kMatrix});
    out.push_back({p + ".bk", 1, hw.bk.size(), hw.bk.data(), TensorRef::Kind::kBias});
    out.push_back({p + ".wv", hw.wv.rows(), hw.wv.cols(), hw.wv.data().data(), TensorRef::Kind::kMatrix});
    out.push_back({p + ".bv", 1, hw.bv.size(), hw.bv.data(), TensorRef::Kind::kBias});
  }
  out.push_back({prefix + ".wo", b.wo.rows(), b.wo.cols(), b.wo.data().data(), TensorRef::Kind::kMatrix});
  out.push_back({prefix + ".bo", 1, b.bo.size(), b.bo.data(), TensorRef::Kind::kBias});
}

void add_ln(std::vector<TensorRef>& out, const std::string& prefix, LayerNormWeights& ln) {
  out.push_back({prefix + ".gamma", 1, ln.gamma.size(), ln.gamma.data(), TensorRef::Kind::kScale});
  out.push_back({prefix + ".beta", 1, ln.beta.size(), ln.beta.data(), TensorRef::Kind::kBias});
}

void add_ffn(std::vector<TensorRef>& out, const std::string& prefix, FeedForwardWeights& f) {
  out.push_back({prefix + ".w1", f.w1.rows(), f.w1.cols(), f.w1.data().data(), TensorRef::Kind::kMatrix});
  out.push_back({prefix + ".b1", 1, f.b1.size(), f.b1.data(), TensorRef::Kind::kBias});
  out.push_back({prefix + ".w2", f.w2.rows(), f.w2.cols(), f.w2.data().data(), TensorRef::Kind::kMatrix});
  out.push_back({prefix + ".b2", 1, f.b2.size(), f.b2.data(), TensorRef::Kind::kBias});
}

Matrix layer_norm(const Matrix& x, const LayerNormWeights& ln) {
  Matrix out(x.rows(), x.cols());
  const auto n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) = ln.gamma[j] * (r[j] - mean) * inv + ln.beta[j];
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix feed_forward(const Matrix& x, const FeedForwardWeights& f) {
  Matrix h = affine(x, f.w1, f.b1);
  for (double& v : h.data()) v = std::max(v, 0.0);
  return affine(h, f.w2, f.b2);
}

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and weights
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [this](const std::string& msg) { throw ConfigError(msg, to_json()); };
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || max_positions < 1) fail("model dimensions must be >= 1");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (bos_id < 0 || bos_id >= vocab_size || eos_id < 0 || eos_id >= vocab_size || bos_id == eos_id) {
    fail("bos_id and eos_id must be distinct ids inside the vocabulary");
  }
}

json ModelConfig::to_json() const {
  return {{"n_layers", n_layers}, {"n_heads", n_heads},     {"d_model", d_model},
          {"d_ff", d_ff},         {"vocab_size", vocab_size}, {"max_positions", max_positions},
          {"seed", seed},         {"bos_id", bos_id},         {"eos_id", eos_id}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.bos_id = j.at("bos_id").get<int>();
    c.eos_id = j.at("eos_id").get<int>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelWeights ModelWeights::zeros(const ModelConfig& c) {
  c.validate();
  ModelWeights w;
  const auto vocab = static_cast<std::size_t>(c.vocab_size);
  const auto d = static_cast<std::size_t>(c.d_model);
  w.embedding = Matrix(vocab, d);
  for (int l = 0; l < c.n_layers; ++l) {
    w.encoder.push_back({zero_block(c), unit_layer_norm(c), zero_ffn(c), unit_layer_norm(c)});
    w.decoder.push_back(
        {zero_block(c), unit_layer_norm(c), zero_block(c), unit_layer_norm(c), zero_ffn(c), unit_layer_norm(c)});
  }
  w.out_proj = Matrix(vocab, d);
  w.out_bias.assign(vocab, 0.0);
  return w;
}

ModelWeights ModelWeights::random(const ModelConfig& c) {
  ModelWeights w = zeros(c);
  std::mt19937_64 gen(c.seed);
  const double range = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  for (auto& t : named_tensors(w)) {
    if (t.kind != TensorRef::Kind::kMatrix) continue;
    for (std::size_t i = 0; i < t.rows * t.cols; ++i) {
      // 53 random mantissa bits; avoids implementation-defined distributions.
      const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
      t.data[i] = (2.0 * u - 1.0) * range;
    }
  }
  return w;
}

std::vector<TensorRef> named_tensors(ModelWeights& w) {
  std::vector<TensorRef> out;
  out.push_back({"embedding", w.embedding.rows(), w.embedding.cols(), w.embedding.data().data(), TensorRef::Kind::kMatrix});
  for (std::size_t l = 0; l < w.encoder.size(); ++l) {
    const auto p = "encoder." + std::to_string(l);
    auto& layer = w.encoder[l];
    add_block(out, p + ".self_attn", layer.self_attn);
    add_ln(out, p + ".ln1", layer.ln1);
    add_ffn(out, p + ".ffn", layer.ffn);
    add_ln(out, p + ".ln2", layer.ln2);
  }
  for (std::size_t l = 0; l < w.decoder.size(); ++l) {
    const auto p = "decoder." + std::to_string(l);
    auto& layer = w.decoder[l];
    add_block(out, p + ".self_attn", layer.self_attn);
    add_ln(out, p + ".ln1", layer.ln1);
    add_block(out, p + ".cross_attn", layer.cross_attn);
    add_ln(out, p + ".ln2", layer.ln2);
    add_ffn(out, p + ".ffn", layer.ffn);
    add_ln(out, p + ".ln3", layer.ln3);
  }
  out.push_back({"out_proj", w.out_proj.rows(), w.out_proj.cols(), w.out_proj.data().data(), TensorRef::Kind::kMatrix});
  out.push_back({"out_bias", 1, w.out_bias.size(), w.out_bias.data(), TensorRef::Kind::kBias});
  return out;
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

void AttentionOverride::set(const OverrideKey& key, std::vector<double> dist) {
  double sum = 0.0;
  for (double v : dist) {
    if (!std::isfinite(v) || v < 0.0) {
      throw OverrideShapeError("override entries must be finite and non-negative", {{"row", key.row}});
    }
    sum += v;
  }
  if (dist.empty() || std::fabs(sum - 1.0) > 1e-9) {
    throw OverrideShapeError("override row must sum to 1 within 1e-9", {{"row", key.row}, {"sum", sum}});
  }
  rows_[key] = std::move(dist);
}

std::size_t AttentionOverride::decoder_row_limit(std::span<const int> generated) const noexcept {
  if (!path_) return std::numeric_limits<std::size_t>::max();
  std::size_t n = 0;
  while (n < generated.size() && n < path_->size() && generated[n] == (*path_)[n]) ++n;
  return n + 1;
}

const std::vector<double>* AttentionOverride::find(const OverrideKey& key) const {
  auto it = rows_.find(key);
  return it == rows_.end() ? nullptr : &it->second;
}

Matrix attention_weights(const Matrix& q, const Matrix& k, bool causal) {
  if (q.cols() == 0) throw ShapeError("attention needs d_k > 0");
  if (q.cols() != k.cols()) {
    throw ShapeError("query and key widths differ", {{"q_cols", q.cols()}, {"k_cols", k.cols()}});
  }
  if (causal && q.rows() != k.rows()) throw ShapeError("causal attention needs as many queries as keys");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix w(q.rows(), k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t n_keys = causal ? i + 1 : k.rows();
    const auto qi = q.row(i);
    auto wi = w.row(i).subspan(0, n_keys);
    for (std::size_t j = 0; j < n_keys; ++j) {
      const auto kj = k.row(j);
      double s = 0.0;
      for (std::size_t c = 0; c < qi.size(); ++c) s += qi[c] * kj[c];
      wi[j] = s * scale;
    }
    softmax_inplace(wi);
  }
  return w;
}

Matrix mix_values(const Matrix& weights, const Matrix& v, bool causal) {
  if (weights.cols() != v.rows()) {
    throw ShapeError("attention weights and values disagree on the key count",
                     {{"weights_cols", weights.cols()}, {"v_rows", v.rows()}});
  }
  Matrix out(weights.rows(), v.cols());
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    const std::size_t n_keys = causal ? std::min(i + 1, v.rows()) : v.rows();
    auto oi = out.row(i);
    for (std::size_t j = 0; j < n_keys; ++j) {
      const double a = weights(i, j);
      const auto vj = v.row(j);
      for (std::size_t c = 0; c < oi.size(); ++c) oi[c] += a * vj[c];
    }
  }
  return out;
}

AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v, bool causal) {
  if (k.rows() != v.rows()) throw ShapeError("keys and values need the same number of rows");
  AttentionResult r;
  r.weights = attention_weights(q, k, causal);
  r.context = mix_values(r.weights, v, causal);
  return r;
}

Matrix multi_head(const Matrix& query_states, const Matrix& kv_states, const AttentionBlockWeights& block,
                  const HeadContext& ctx) {
  if (block.heads.empty()) throw ShapeError("attention block has no heads");
  const std::size_t d_model = block.wo.rows();
  if (query_states.cols() != d_model || kv_states.cols() != d_model) {
    throw ShapeError("hidden state width does not match d_model",
                     {{"query_cols", query_states.cols()}, {"kv_cols", kv_states.cols()}, {"d_model", d_model}});
  }
  const std::size_t d_k = block.heads.front().wq.cols();
  Matrix concat(query_states.rows(), d_k * block.heads.size());

  for (std::size_t h = 0; h < block.heads.size(); ++h) {
    const auto& hw = block.heads[h];
    const Matrix q = affine(query_states, hw.wq, hw.bq);
    const Matrix k = affine(kv_states, hw.wk, hw.bk);
    const Matrix v = affine(kv_states, hw.wv, hw.bv);
    Matrix w = attention_weights(q, k, ctx.causal);

    if (ctx.override && !ctx.override->empty()) {
      for (std::size_t r = 0; r < std::min(w.rows(), ctx.override_rows); ++r) {
        const auto* repl = ctx.override->find({ctx.type, ctx.layer, static_cast<int>(h), r});
        if (!repl) continue;
        const std::size_t expected = ctx.causal ? r + 1 : w.cols();
        if (repl->size() != expected) {
          throw OverrideShapeError("override length does not match the key count",
                                   {{"type", to_string(ctx.type)},
                                    {"layer", ctx.layer},
                                    {"head", h},
                                    {"row", r},
                                    {"length", repl->size()},
                                    {"expected", expected}});
        }
        auto row = w.row(r);
        std::fill(row.begin(), row.end(), 0.0);
        std::copy(repl->begin(), repl->end(), row.begin());
      }
    }

    const Matrix context = mix_values(w, v, ctx.causal);
    for (std::size_t i = 0; i < context.rows(); ++i) {
      for (std::size_t c = 0; c < d_k; ++c) concat(i, h * d_k + c) = context(i, c);
    }
    if (ctx.recorder) (*ctx.recorder)[MatrixKey{ctx.type, ctx.layer, static_cast<int>(h)}] = std::move(w);
  }
  return affine(concat, block.wo, block.bo);
}

Matrix sinusoidal_positions(std::size_t length, std::size_t d_model) {
  Matrix pe(length, d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

std::vector<double> output_probabilities(std::span<const double> logits, int bos_id) {
  std::vector<double> p(logits.begin(), logits.end());
  if (bos_id >= 0 && static_cast<std::size_t>(bos_id) < p.size()) p[static_cast<std::size_t>(bos_id)] = -std::numeric_limits<double>::infinity();
  softmax_inplace(p);
  return p;
}

std::vector<double> output_log_probabilities(std::span<const double> logits, int bos_id) {
  std::vector<double> lp(logits.begin(), logits.end());
  const auto bos = static_cast<std::size_t>(bos_id);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (i != bos) mx = std::max(mx, lp[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (i != bos) z += std::exp(lp[i] - mx);
  }
  const double log_z = std::log(z);
  for (std::size_t i = 0; i < lp.size(); ++i) {
    lp[i] = (i == bos) ? -std::numeric_limits<double>::infinity() : lp[i] - mx - log_z;
  }
  return lp;
}

std::vector<TopEntry> top_k_entries(std::span<const double> probs, std::size_t k) {
  std::vector<int> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](int a, int b) {
    if (probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)]) {
      return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  std::vector<TopEntry> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], probs[static_cast<std::size_t>(idx[i])]});
  return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, ModelWeights weights) : config_(config), weights_(std::move(weights)) {
  config_.validate();
  auto expected = ModelWeights::zeros(config_);
  auto want = named_tensors(expected);
  auto have = named_tensors(weights_);
  if (want.size() != have.size()) throw ShapeError("weights do not match the model geometry");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].name != have[i].name || want[i].rows != have[i].rows || want[i].cols != have[i].cols) {
      throw ShapeError("tensor " + have[i].name + " has the wrong shape",
                       {{"tensor", have[i].name}, {"expected", {want[i].rows, want[i].cols}}, {"actual", {have[i].rows, have[i].cols}}});
    }
    for (std::size_t j = 0; j < have[i].rows * have[i].cols; ++j) {
      if (!std::isfinite(have[i].data[j])) throw ShapeError("tensor " + have[i].name + " holds a non-finite value");
    }
  }
}

Model Model::random(const ModelConfig& config) { return Model(config, ModelWeights::random(config)); }

void Model::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw LengthError("token sequence is empty");
  if (tokens.size() > static_cast<std::size_t>(config_.max_positions)) {
    throw LengthError("token sequence exceeds max_positions",
                      {{"length", tokens.size()}, {"max_positions", config_.max_positions}});
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= config_.vocab_size) {
      throw VocabError("token id outside the vocabulary", {{"index", i}, {"id", tokens[i]}, {"vocab_size", config_.vocab_size}});
    }
  }
}

namespace {

Matrix embed(const ModelWeights& w, std::span<const int> tokens, int d_model) {
  const Matrix pe = sinusoidal_positions(tokens.size(), static_cast<std::size_t>(d_model));
  const double scale = std::sqrt(static_cast<double>(d_model));
  Matrix x(tokens.size(), static_cast<std::size_t>(d_model));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto e = w.embedding.row(static_cast<std::size_t>(tokens[i]));
    for (std::size_t c = 0; c < e.size(); ++c) x(i, c) = e[c] * scale + pe(i, c);
  }
  return x;
}

}  // namespace

EncoderOutput Model::encode(std::span<const int> tokens, const AttentionOverride* override) const {
  check_tokens(tokens);
  EncoderOutput out;
  Matrix x = embed(weights_, tokens, config_.d_model);
  for (int l = 0; l < config_.n_layers; ++l) {
    const auto& layer = weights_.encoder[static_cast<std::size_t>(l)];
    const Matrix a = multi_head(x, x, layer.self_attn, {AttentionType::ENC_SELF, l, false, override, &out.attention});
    x = layer_norm(add(x, a), layer.ln1);
    x = layer_norm(add(x, feed_forward(x, layer.ffn)), layer.ln2);
  }
  out.states = std::move(x);
  return out;
}

DecoderPass Model::decode_forced(const EncoderOutput& encoded, std::span<const int> decoder_input,
                                 const AttentionOverride* override, bool record) const {
  check_tokens(decoder_input);
  if (encoded.states.cols() != static_cast<std::size_t>(config_.d_model) || encoded.states.rows() == 0) {
    throw ShapeError("encoder states do not match this model");
  }
  DecoderPass out;
  AttentionMaps* rec = record ? &out.attention : nullptr;
  const std::size_t limit = override ? override->decoder_row_limit(decoder_input.subspan(1)) : 0;
  Matrix y = embed(weights_, decoder_input, config_.d_model);
  for (int l = 0; l < config_.n_layers; ++l) {
    const auto& layer = weights_.decoder[static_cast<std::size_t>(l)];
    const Matrix s = multi_head(y, y, layer.self_attn, {AttentionType::DEC_SELF, l, true, override, rec, limit});
    y = layer_norm(add(y, s), layer.ln1);
    const Matrix c = multi_head(y, encoded.states, layer.cross_attn, {AttentionType::DEC_CROSS, l, false, override, rec, limit});
    y = layer_norm(add(y, c), layer.ln2);
    y = layer_norm(add(y, feed_forward(y, layer.ffn)), layer.ln3);
  }
  out.logits = matmul_transposed(y, weights_.out_proj);
  for (std::size_t i = 0; i < out.logits.rows(); ++i) {
    auto r = out.logits.row(i);
    for (std::size_t v = 0; v < r.size(); ++v) r[v] += weights_.out_bias[v];
  }
  return out;
}

std::vector<double> Model::next_token_probs(const EncoderOutput& encoded, std::span<const int> generated,
                                            const AttentionOverride* override) const {
  std::vector<int> input;
  input.reserve(generated.size() + 1);
  input.push_back(config_.bos_id);
  input.insert(input.end(), generated.begin(), generated.end());
  const auto pass = decode_forced(encoded, input, override, false);
  return output_probabilities(pass.logits.row(pass.logits.rows() - 1), config_.bos_id);
}

DecodeResult Model::beam_decode(const EncoderOutput& encoded, const BeamConfig& beam,
                                const AttentionOverride* override) const {
  if (beam.max_len + 1 > config_.max_positions) {
    throw LengthError("max_len exceeds the model's max_positions", {{"max_len", beam.max_len}});
  }
  StepScorer scorer = [&](std::span<const int> prefix) {
    std::vector<int> input;
    input.reserve(prefix.size() + 1);
    input.push_back(config_.bos_id);
    input.insert(input.end(), prefix.begin(), prefix.end());
    const auto pass = decode_forced(encoded, input, override, false);
    return output_log_probabilities(pass.logits.row(pass.logits.rows() - 1), config_.bos_id);
  };
  const Hypothesis best = beam_search(scorer, config_.eos_id, beam);
  DecodeResult result = replay(encoded, best.tokens, static_cast<std::size_t>(beam.beam_size), override);
  result.log_prob = best.log_prob;
  result.score = best.score;
  return result;
}

DecodeResult Model::replay(const EncoderOutput& encoded, std::span<const int> tokens, std::size_t top_k,
                           const AttentionOverride* override) const {
  if (tokens.empty()) throw LengthError("cannot replay an empty output");
  std::vector<int> input;
  input.push_back(config_.bos_id);
  input.insert(input.end(), tokens.begin(), tokens.end() - 1);
  auto pass = decode_forced(encoded, input, override, true);

  DecodeResult r;
  r.tokens.assign(tokens.begin(), tokens.end());
  r.attention = std::move(pass.attention);
  for (std::size_t t = 0; t < pass.logits.rows(); ++t) {
    const auto row = pass.logits.row(t);
    r.step_logits.emplace_back(row.begin(), row.end());
    r.step_probs.push_back(output_probabilities(row, config_.bos_id));
    r.top_k.push_back(top_k_entries(r.step_probs.back(), top_k));
    const auto lp = output_log_probabilities(row, config_.bos_id);
    r.log_prob += lp[static_cast<std::size_t>(tokens[t])];
  }
  r.score = r.log_prob;
  return r;
}

// ---------------------------------------------------------------------------
// Weight file
// ---------------------------------------------------------------------------

void save_weights(const Model& model, const std::filesystem::path& path) {
  ModelWeights w = model.weights();
  const auto tensors = named_tensors(w);
  json header;
  header["format"] = "headscope-weights";
  header["version"] = 1;
  header["dtype"] = "float32";
  header["endianness"] = "little";
  header["config"] = model.config().to_json();
  header["tensors"] = json::array();
  for (const auto& t : tensors) header["tensors"].push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  const std::string header_text = header.dump();

  std::string bytes(kWeightMagic, sizeof(kWeightMagic));
  append_u64_le(bytes, header_text.size());
  bytes += header_text;
  for (const auto& t : tensors) {
    for (std::size_t i = 0; i < t.rows * t.cols; ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t.data[i]));
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string(), {{"path", path.string()}});
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string(), {{"path", path.string()}});
}

Model load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open weight file " + path.string(), {{"path", path.string()}});
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kWeightMagic, sizeof(kWeightMagic)) != 0) {
    throw SchemaError("not a weight file: " + path.string());
  }
  std::uint64_t header_len = 0;
  for (int b = 0; b < 8; ++b) header_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
  if (header_len > bytes.size() - 16) throw SchemaError("weight file header is truncated");

  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("malformed weight header: ") + e.what());
  }
  const auto config = ModelConfig::from_json(header.at("config"));
  ModelWeights w = ModelWeights::zeros(config);
  auto tensors = named_tensors(w);
  const auto& declared = header.at("tensors");
  if (!declared.is_array() || declared.size() != tensors.size()) throw SchemaError("weight file tensor list does not match the config");

  std::size_t offset = 16 + header_len;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& d = declared[i];
    if (d.at("name") != tensors[i].name || d.at("shape") != json{tensors[i].rows, tensors[i].cols}) {
      throw SchemaError("weight file tensor " + std::to_string(i) + " does not match the expected layout",
                        {{"expected", tensors[i].name}});
    }
    const std::size_t n = tensors[i].rows * tensors[i].cols;
    if (offset + n * 4 > bytes.size()) throw SchemaError("weight file data is truncated");
    for (std::size_t j = 0; j < n; ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + j * 4 + b])) << (8 * b);
      tensors[i].data[j] = static_cast<double>(std::bit_cast<float>(bits));
    }
    offset += n * 4;
  }
  if (offset != bytes.size()) throw SchemaError("weight file has trailing bytes");
  return Model(config, std::move(w));
}

}  // namespace headscope
