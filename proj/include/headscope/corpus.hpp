// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace headscope {

// ---------------------------------------------------------------------------
// Tag sets
// ---------------------------------------------------------------------------

/// The 12-tag universal POS set.
enum class UposTag : std::uint8_t { VERB, NOUN, PRON, ADJ, ADV, ADP, CONJ, DET, NUM, PRT, X, PUNC };
inline constexpr std::size_t kUposCount = 12;
inline constexpr std::array<UposTag, kUposCount> kAllUpos = {
    UposTag::VERB, UposTag::NOUN, UposTag::PRON, UposTag::ADJ, UposTag::ADV, UposTag::ADP,
    UposTag::CONJ, UposTag::DET,  UposTag::NUM,  UposTag::PRT, UposTag::X,   UposTag::PUNC};

/// Named-entity classes. NONE marks a non-entity token.
enum class NeClass : std::uint8_t { PER, LOC, ORG, MISC, NONE };
inline constexpr std::size_t kEntityClassCount = 4;
inline constexpr std::array<NeClass, kEntityClassCount> kEntityClasses = {NeClass::PER, NeClass::LOC,
                                                                          NeClass::ORG, NeClass::MISC};

enum class AttentionType : std::uint8_t { ENC_SELF, DEC_SELF, DEC_CROSS };
inline constexpr std::array<AttentionType, 3> kAllAttentionTypes = {
    AttentionType::ENC_SELF, AttentionType::DEC_SELF, AttentionType::DEC_CROSS};

std::string_view to_string(UposTag tag) noexcept;
std::string_view to_string(NeClass ne) noexcept;
std::string_view to_string(AttentionType type) noexcept;

/// Accepts the 12 tag names plus "." for punctuation.
std::optional<UposTag> parse_upos(std::string_view s) noexcept;
/// Accepts PER/LOC/ORG/MISC/NONE, "O" for NONE, and strips BIO-style
/// prefixes (B-, I-, E-, S-, L-, U-).
std::optional<NeClass> parse_ne(std::string_view s) noexcept;
std::optional<AttentionType> parse_attention_type(std::string_view s) noexcept;

inline bool is_square(AttentionType t) noexcept { return t != AttentionType::DEC_CROSS; }

// ---------------------------------------------------------------------------
// In-memory corpus
// ---------------------------------------------------------------------------

struct MatrixKey {
  AttentionType type = AttentionType::ENC_SELF;
  int layer = 0;
  int head = 0;

  auto operator<=>(const MatrixKey&) const = default;
};

/// "<TYPE>_<layer>_<head>", the stem used for matrix file names.
std::string key_name(const MatrixKey& key);
std::optional<MatrixKey> parse_key_name(std::string_view stem) noexcept;

/// Row-major attention weights for one (type, layer, head).
struct AttentionMatrix {
  MatrixKey key;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;

  double at(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {weights.data() + r * cols, cols}; }
};

/// Throws RowSumError if any entry is outside [0, 1] or any row sum deviates
/// from 1 by more than `tolerance`.
void validate_row_stochastic(const AttentionMatrix& m, double tolerance);

struct Token {
  std::string text;
  UposTag pos = UposTag::X;
  NeClass ne = NeClass::NONE;

  bool operator==(const Token&) const = default;
};

struct AnnotatedArticle {
  std::string article_id;
  std::vector<Token> source_tokens;
  std::vector<Token> summary_tokens;
  std::map<MatrixKey, AttentionMatrix> matrices;

  /// Token sequence the keys of `type` range over: summary tokens for
  /// DEC_SELF, source tokens otherwise.
  std::span<const Token> key_tokens(AttentionType type) const;
  /// Expected (rows, cols) for a matrix of `type` in this article.
  std::pair<std::size_t, std::size_t> expected_dims(AttentionType type) const;
};

struct ArticleEntry {
  std::string id;
  std::size_t source_len = 0;
  std::size_t summary_len = 0;
};

struct DumpManifest {
  std::filesystem::path root;
  int n_layers = 4;
  int n_heads = 8;
  std::vector<AttentionType> attention_types{kAllAttentionTypes.begin(), kAllAttentionTypes.end()};
  std::vector<ArticleEntry> articles;
  std::size_t max_source_tokens = 400;
  std::string dtype = "float32";
  std::string endianness = "little";
  /// Recorded verbatim ("beam" | "forced"), never interpreted.
  std::optional<std::string> decode_mode;

  const ArticleEntry* find(std::string_view id) const noexcept;
  /// Every (type, layer, head) the manifest declares, in type/layer/head order.
  std::vector<MatrixKey> keys() const;
  nlohmann::json to_json() const;
};

inline constexpr double kLoadRowSumTolerance = 1e-5;

/// Reads and validates `manifest.json` (path may name the file or the dump
/// directory). Checks every declared file exists and every matrix blob has
/// rows*cols*4 bytes.
DumpManifest load_manifest(const std::filesystem::path& path);

AnnotatedArticle load_article(const DumpManifest& manifest, std::string_view article_id);

/// Parses a tokens.tsv body. Line numbers in TagError are 1-based.
std::pair<std::vector<Token>, std::vector<Token>> parse_tokens_tsv(std::string_view text);
std::string format_tokens_tsv(std::span<const Token> source, std::span<const Token> summary);

struct WriteOptions {
  std::optional<std::string> decode_mode;
  std::size_t max_source_tokens = 400;
  /// Used only when `articles` is empty; otherwise geometry is inferred.
  int n_layers = 4;
  int n_heads = 8;
};

/// Validates every article, then writes the dump. Nothing touches the disk
/// if validation fails. Geometry (layers, heads, types) is inferred from the
/// matrices and must form a full grid in every article.
DumpManifest write_dump(std::span<const AnnotatedArticle> articles, const std::filesystem::path& path,
                        const WriteOptions& options = {});

/// A fully loaded dump. Articles keep manifest order; nothing is mutated
/// after load.
struct Corpus {
  DumpManifest manifest;
  std::vector<AnnotatedArticle> articles;

  const AnnotatedArticle* find(std::string_view id) const noexcept;
};

Corpus load_corpus(const std::filesystem::path& path, unsigned threads = 0);

}  // namespace headscope
