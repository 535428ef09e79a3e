// SPDX-License-Identifier: Apache-2.0
#include "headscope/export.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <random>

#include "headscope/error.hpp"
#include "headscope/numeric.hpp"

namespace headscope {

namespace {

constexpr std::array<int, 3> kDocLengths = {20, 30, 40};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Modulo draw; the bias is irrelevant for test data and keeps output
// identical across standard library implementations.
std::size_t draw_index(std::mt19937_64& gen, std::size_t n) { return static_cast<std::size_t>(gen() % n); }

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& gen) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[draw_index(gen, i)]);
}

}  // namespace

SyntheticLexicon::SyntheticLexicon(int vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < 7) throw ConfigError("synthetic lexicon needs vocab_size >= 7", {{"vocab_size", vocab_size}});
}

Token SyntheticLexicon::token(int id) const {
  if (id < 0 || id >= vocab_size_) throw VocabError("token id outside the vocabulary", {{"id", id}});
  if (id == 0) return {"<s>", UposTag::X, NeClass::NONE};
  if (id == 1) return {"</s>", UposTag::PUNC, NeClass::NONE};
  if (is_entity_id(id)) {
    const NeClass ne = kEntityClasses[static_cast<std::size_t>(id / 5 - 1) % kEntityClasses.size()];
    return {lower(to_string(ne)) + std::to_string(id), UposTag::NOUN, ne};
  }
  const UposTag pos = kAllUpos[static_cast<std::size_t>(id) % kUposCount];
  return {lower(to_string(pos)) + std::to_string(id), pos, NeClass::NONE};
}

std::optional<int> SyntheticLexicon::id_of(std::string_view text) const {
  if (text == "<s>") return 0;
  if (text == "</s>") return 1;
  const auto digits = text.find_first_of("0123456789");
  if (digits == std::string_view::npos || digits == 0) return std::nullopt;
  int id = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data() + digits, end, id);
  if (ec != std::errc{} || ptr != end || id < 2 || id >= vocab_size_) return std::nullopt;
  if (token(id).text != text) return std::nullopt;
  return id;
}

namespace {

void check_fraction(double entity_fraction) {
  if (!(entity_fraction >= 0.0 && entity_fraction <= 1.0)) {
    throw ConfigError("entity fraction must lie in [0, 1]", {{"entity_fraction", entity_fraction}});
  }
}

SourceDocument draw_document(std::string id, std::size_t len, const SyntheticLexicon& lexicon, std::mt19937_64& gen,
                             double entity_fraction) {
  std::vector<int> entity_ids, plain_ids;
  for (int v = 2; v < lexicon.vocab_size(); ++v) (SyntheticLexicon::is_entity_id(v) ? entity_ids : plain_ids).push_back(v);

  SourceDocument doc;
  doc.id = std::move(id);
  const auto n_entities = static_cast<std::size_t>(std::llround(static_cast<double>(len) * entity_fraction));
  std::vector<std::size_t> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = i;
  shuffle(positions, gen);
  std::vector<bool> is_entity(len, false);
  for (std::size_t i = 0; i < n_entities; ++i) is_entity[positions[i]] = true;

  for (std::size_t i = 0; i < len; ++i) {
    const auto& pool = is_entity[i] ? entity_ids : plain_ids;
    const int v = pool[draw_index(gen, pool.size())];
    doc.token_ids.push_back(v);
    doc.tokens.push_back(lexicon.token(v));
  }
  return doc;
}

}  // namespace

SourceDocument synthetic_document(std::string id, std::size_t length, const SyntheticLexicon& lexicon, std::uint64_t seed,
                                  double entity_fraction) {
  check_fraction(entity_fraction);
  if (length == 0) throw LengthError("synthetic document needs at least one token");
  std::mt19937_64 gen(seed);
  return draw_document(std::move(id), length, lexicon, gen, entity_fraction);
}

std::vector<SourceDocument> synthetic_documents(std::size_t count, const SyntheticLexicon& lexicon, std::uint64_t seed,
                                                double entity_fraction) {
  check_fraction(entity_fraction);
  std::mt19937_64 gen(seed);
  std::vector<SourceDocument> docs;
  for (std::size_t d = 0; d < count; ++d) {
    char name[32];
    std::snprintf(name, sizeof(name), "doc%04zu", d);
    const auto len = static_cast<std::size_t>(kDocLengths[draw_index(gen, kDocLengths.size())]);
    docs.push_back(draw_document(name, len, lexicon, gen, entity_fraction));
  }
  return docs;
}

AttentionMatrix to_attention_matrix(const MatrixKey& key, const Matrix& weights) {
  return {key, weights.rows(), weights.cols(), weights.data()};
}

AnnotatedArticle build_article(const Model& model, const SourceDocument& doc, const SyntheticLexicon& lexicon,
                               const BeamConfig& beam) {
  if (doc.tokens.size() != doc.token_ids.size()) {
    throw LengthMismatch("annotations do not align with token ids",
                         {{"id", doc.id}, {"tokens", doc.tokens.size()}, {"token_ids", doc.token_ids.size()}});
  }
  AnnotatedArticle a;
  a.article_id = doc.id;
  a.source_tokens = doc.tokens;

  auto encoded = model.encode(doc.token_ids);
  const auto decoded = model.beam_decode(encoded, beam);
  for (int id : decoded.tokens) a.summary_tokens.push_back(lexicon.token(id));
  for (const auto& [key, w] : encoded.attention) a.matrices.emplace(key, to_attention_matrix(key, w));
  for (const auto& [key, w] : decoded.attention) a.matrices.emplace(key, to_attention_matrix(key, w));
  return a;
}

DumpManifest export_dump(const Model& model, std::span<const SourceDocument> docs, const SyntheticLexicon& lexicon,
                         const BeamConfig& beam, const std::filesystem::path& path, unsigned threads) {
  std::vector<AnnotatedArticle> articles(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t i) { articles[i] = build_article(model, docs[i], lexicon, beam); });
  WriteOptions options;
  options.decode_mode = "beam";
  options.n_layers = model.config().n_layers;
  options.n_heads = model.config().n_heads;
  return write_dump(articles, path, options);
}

}  // namespace headscope
