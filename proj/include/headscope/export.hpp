// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "headscope/corpus.hpp"
#include "headscope/transformer.hpp"

namespace headscope {

/// Deterministic annotation for every id of a synthetic vocabulary.
///
///   id 0          "<s>"   X     NONE
///   id 1          "</s>"  PUNC  NONE
///   id % 5 == 0   NOUN, entity class cycling PER, LOC, ORG, MISC
///   otherwise     universal tag number id % 12, NONE
///
/// Texts are the lower-cased tag or class followed by the id ("verb12",
/// "per5"), so `id_of` inverts `token`.
class SyntheticLexicon {
 public:
  explicit SyntheticLexicon(int vocab_size);

  int vocab_size() const noexcept { return vocab_size_; }
  Token token(int id) const;
  std::optional<int> id_of(std::string_view text) const;
  static bool is_entity_id(int id) noexcept { return id >= 2 && id % 5 == 0; }

 private:
  int vocab_size_;
};

struct SourceDocument {
  std::string id;
  std::vector<int> token_ids;
  std::vector<Token> tokens;  // annotations aligned with token_ids
};

/// One document of `length` tokens with round(length × entity_fraction)
/// entity tokens at seeded positions.
SourceDocument synthetic_document(std::string id, std::size_t length, const SyntheticLexicon& lexicon,
                                  std::uint64_t seed, double entity_fraction = 0.1);

/// Documents whose lengths cycle through {20, 30, 40} (shuffled by seed) and
/// whose entity-token count is round(length × entity_fraction).
std::vector<SourceDocument> synthetic_documents(std::size_t count, const SyntheticLexicon& lexicon,
                                                std::uint64_t seed, double entity_fraction = 0.1);

/// Encodes and beam-decodes one document, returning the annotated article
/// with every ENC_SELF, DEC_SELF and DEC_CROSS matrix. Summary tokens are
/// annotated through `lexicon`.
AnnotatedArticle build_article(const Model& model, const SourceDocument& doc, const SyntheticLexicon& lexicon,
                               const BeamConfig& beam);

AttentionMatrix to_attention_matrix(const MatrixKey& key, const Matrix& weights);

/// build_article for every document, then write_dump with decode_mode "beam".
DumpManifest export_dump(const Model& model, std::span<const SourceDocument> docs, const SyntheticLexicon& lexicon,
                         const BeamConfig& beam, const std::filesystem::path& path, unsigned threads = 0);

}  // namespace headscope
