// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace fixtures {

namespace fs = std::filesystem;
using namespace headscope;

AttentionMatrix make_matrix(const MatrixKey& key, const Rows& rows) {
  AttentionMatrix m;
  m.key = key;
  m.rows = rows.size();
  m.cols = rows.empty() ? 0 : rows.front().size();
  for (const auto& r : rows) m.weights.insert(m.weights.end(), r.begin(), r.end());
  return m;
}

AttentionMatrix shift_matrix(const MatrixKey& key, const std::vector<int>& offsets) {
  const std::size_t n = offsets.size();
  Rows rows(n, std::vector<double>(n, 0.0));
  for (std::size_t t = 0; t < n; ++t) rows[t][static_cast<std::size_t>(static_cast<int>(t) + offsets[t])] = 1.0;
  return make_matrix(key, rows);
}

AttentionMatrix uniform_matrix(const MatrixKey& key, std::size_t rows, std::size_t cols) {
  return make_matrix(key, Rows(rows, std::vector<double>(cols, 1.0 / static_cast<double>(cols))));
}

AttentionMatrix random_matrix(const MatrixKey& key, std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                              bool causal) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Rows out(rows, std::vector<double>(cols, 0.0));
  for (std::size_t t = 0; t < rows; ++t) {
    const std::size_t limit = causal ? t + 1 : cols;
    double z = 0.0;
    for (std::size_t j = 0; j < limit; ++j) z += (out[t][j] = u(rng));
    for (std::size_t j = 0; j < limit; ++j) out[t][j] /= z;
  }
  return make_matrix(key, out);
}

Token tok(std::string text, UposTag pos, NeClass ne) { return Token{std::move(text), pos, ne}; }

std::vector<Token> random_tokens(std::size_t length, double fraction, std::mt19937_64& rng) {
  const auto n_entities = static_cast<std::size_t>(std::llround(static_cast<double>(length) * fraction));
  std::vector<Token> tokens;
  for (std::size_t i = 0; i < length; ++i) {
    const auto pos = kAllUpos[rng() % kUposCount];
    tokens.push_back(tok("w" + std::to_string(i), pos));
  }
  std::vector<std::size_t> order(length);
  for (std::size_t i = 0; i < length; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < n_entities; ++i) {
    auto& t = tokens[order[i]];
    t.pos = UposTag::NOUN;
    t.ne = kEntityClasses[rng() % kEntityClassCount];
  }
  return tokens;
}

AnnotatedArticle random_article(const std::string& id, std::size_t source_len, std::size_t summary_len, int n_layers,
                                int n_heads, std::mt19937_64& rng) {
  AnnotatedArticle a;
  a.article_id = id;
  a.source_tokens = random_tokens(source_len, 0.1, rng);
  a.summary_tokens = random_tokens(summary_len, 0.0, rng);
  for (int l = 0; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) {
      const MatrixKey enc{AttentionType::ENC_SELF, l, h};
      const MatrixKey dself{AttentionType::DEC_SELF, l, h};
      const MatrixKey cross{AttentionType::DEC_CROSS, l, h};
      a.matrices[enc] = random_matrix(enc, source_len, source_len, rng);
      a.matrices[dself] = random_matrix(dself, summary_len, summary_len, rng, true);
      a.matrices[cross] = random_matrix(cross, summary_len, source_len, rng);
    }
  }
  return a;
}

AnnotatedArticle hand_article() {
  AnnotatedArticle a;
  a.article_id = "hand";
  a.source_tokens = {
      tok("The", UposTag::DET),          tok("Sydney", UposTag::NOUN, NeClass::LOC),
      tok("council", UposTag::NOUN),     tok("said", UposTag::VERB),
      tok(".", UposTag::PUNC),           tok("John", UposTag::NOUN, NeClass::PER),
      tok("Smith", UposTag::NOUN, NeClass::PER), tok("met", UposTag::VERB),
      tok("Acme", UposTag::NOUN, NeClass::ORG),  tok("officials", UposTag::NOUN),
      tok("on", UposTag::ADP),           tok("Easter", UposTag::NOUN, NeClass::MISC),
      tok(",", UposTag::PUNC),           tok("and", UposTag::CONJ),
      tok("they", UposTag::PRON),        tok("quickly", UposTag::ADV),
      tok("signed", UposTag::VERB),      tok("two", UposTag::NUM),
      tok("new", UposTag::ADJ),          tok(".", UposTag::PUNC),
  };
  a.summary_tokens = {tok("Smith", UposTag::NOUN, NeClass::PER), tok("met", UposTag::VERB),
                      tok("Acme", UposTag::NOUN, NeClass::ORG), tok(".", UposTag::PUNC)};
  // Row t peaks at t + offsets[t] with weight 0.5; the rest is spread by a
  // fixed pattern.
  const std::vector<int> offsets = {1, 1, -1, 2, 0, -2, 1, 3, 1, -1, 1, 0, -1, 1, 2, -4, 1, 1, -1, 0};
  const std::size_t n = a.source_tokens.size();
  Rows rows(n, std::vector<double>(n, 0.0));
  for (std::size_t t = 0; t < n; ++t) {
    const auto peak = static_cast<std::size_t>(static_cast<int>(t) + offsets[t]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == peak) continue;
      z += (rows[t][j] = 1.0 + static_cast<double>((t * 7 + j * 3) % 5));
    }
    for (std::size_t j = 0; j < n; ++j) rows[t][j] = j == peak ? 0.5 : 0.5 * rows[t][j] / z;
  }
  const MatrixKey key{AttentionType::ENC_SELF, 0, 0};
  a.matrices[key] = make_matrix(key, rows);
  return a;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("headscope-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Corpus round_trip(const std::vector<AnnotatedArticle>& articles, const fs::path& dir) {
  write_dump(articles, dir);
  return load_corpus(dir, 1);
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 32;
  c.d_ff = 64;
  c.vocab_size = 50;
  c.seed = 42;
  return c;
}

ModelConfig default_config() {
  ModelConfig c;
  c.n_layers = 4;
  c.n_heads = 8;
  c.d_model = 64;
  c.d_ff = 128;
  c.vocab_size = 101;
  c.seed = 42;
  return c;
}

Model degenerate_model(const Model& model, const MatrixKey& key, double sharpen) {
  auto w = model.weights();
  auto& head = w.decoder[static_cast<std::size_t>(key.layer)].cross_attn.heads[static_cast<std::size_t>(key.head)];
  for (double& x : head.wv.data()) x = 0.0;
  for (double& x : head.bv) x = 0.0;
  for (double& x : head.wq.data()) x *= sharpen;
  for (double& x : head.wk.data()) x *= sharpen;
  return Model(model.config(), std::move(w));
}

std::vector<HeadProfile> report_fixture() {
  struct Spec {
    int layer, head;
    double pk, pk_sd, nep, nep_sd, nk, nk_sd;
    UposTag pos;
    double pos_ratio;
    bool has_ne;
    NeClass ne;
    double ne_ratio;
  };
  const std::vector<Spec> specs = {
      {0, 0, 0.12, 0.03, 0.101, 0.02, 0.05, 0.01, UposTag::NOUN, 0.312, true, NeClass::LOC, 0.401},
      {0, 1, 0.31, 0.145, 0.254, 0.05, 0.21, 0.04, UposTag::VERB, 0.205, true, NeClass::ORG, 0.377},
      {0, 2, 0.08, 0.01, 0.099, 0.0, 0.0, 0.0, UposTag::DET, 0.188, false, NeClass::NONE, 0.0},
      {1, 0, 0.55, 0.2, 0.301, 0.07, 0.33, 0.09, UposTag::NOUN, 0.644, true, NeClass::MISC, 0.290},
      {1, 1, 0.31, 0.11, 0.187, 0.03, 0.12, 0.02, UposTag::ADP, 0.215, true, NeClass::PER, 0.512},
      {1, 2, 0.42, 0.14, 0.412, 0.09, 0.27, 0.05, UposTag::PUNC, 0.430, true, NeClass::PER, 0.660},
  };
  std::vector<HeadProfile> out;
  for (const auto& s : specs) {
    HeadProfile p;
    p.key = {AttentionType::DEC_CROSS, s.layer, s.head};
    p.n_articles = 10;
    p.pos_kl = {s.pk, s.pk_sd, 10, false};
    p.nep = {s.nep, s.nep_sd, s.has_ne ? 10u : 0u, !s.has_ne};
    p.ne_kl = {s.nk, s.nk_sd, s.has_ne ? 10u : 0u, !s.has_ne};
    p.top_pos = {s.pos, s.pos_ratio};
    if (s.has_ne) p.top_ne = std::make_pair(s.ne, s.ne_ratio);
    out.push_back(p);
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

// Hand-set logits over 5 tokens, indexed by (previous token + 1, position).
// Greedy takes token 0 first, but the best sequence starts with 1.
const std::array<std::array<std::array<double, 5>, 4>, 6> kLogits = {{
    // after start
    {{{2.0, 1.7, 0.3, -1.0, -3.0}, {2.0, 1.7, 0.3, -1.0, -3.0}, {2.0, 1.7, 0.3, -1.0, -3.0}, {2.0, 1.7, 0.3, -1.0, -3.0}}},
    // after 0: flat, no clear continuation
    {{{0.1, 0.0, 0.2, 0.05, 0.15}, {0.3, 0.1, 0.0, 0.2, 0.25}, {0.0, 0.4, 0.1, 0.3, 0.2}, {0.1, 0.2, 0.3, 0.0, 0.35}}},
    // after 1: almost certainly token 2
    {{{-2.0, -1.5, 3.0, -1.0, -0.5}, {-2.0, -1.5, 3.1, -1.0, -0.4}, {-2.0, -1.5, 2.8, -1.1, -0.3}, {-1.0, -1.5, 1.0, -1.0, 2.0}}},
    // after 2: end
    {{{-1.0, -0.8, -2.0, 0.2, 3.5}, {-1.0, -0.9, -2.0, 0.1, 3.2}, {-1.2, -0.8, -2.0, 0.3, 3.0}, {-1.0, -0.8, -2.1, 0.2, 2.9}}},
    // after 3
    {{{0.5, 0.4, 0.3, 0.2, 1.1}, {0.6, 0.4, 0.3, 0.2, 1.0}, {0.5, 0.45, 0.3, 0.2, 0.9}, {0.5, 0.4, 0.35, 0.2, 0.8}}},
    // after eos (never expanded)
    {{{0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}}},
}};

std::vector<double> log_softmax(const std::array<double, 5>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  std::vector<double> out;
  for (double v : z) out.push_back(v - m - std::log(s));
  return out;
}

}  // namespace

std::vector<double> toy_log_probs(std::span<const int> prefix) {
  const std::size_t prev = prefix.empty() ? 0 : static_cast<std::size_t>(prefix.back()) + 1;
  return log_softmax(kLogits[prev][std::min<std::size_t>(prefix.size(), 3)]);
}

}  // namespace fixtures
