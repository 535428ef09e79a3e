// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "headscope/corpus.hpp"
#include "headscope/numeric.hpp"

namespace headscope {

/// Column mean of a row-stochastic matrix, renormalized so it sums to 1.
using AggregatedAttention = std::vector<double>;

template <class Tag>
using TagDistribution = std::map<Tag, double>;

/// How per-tag attention is turned into a distribution.
///  kMass:    w[c] ∝ Σ_{i: tag(i)=c} ā_i
///  kLiteral: w[c] ∝ count[c] · Σ_{i: tag(i)=c} ā_i
enum class WeightingMode { kMass, kLiteral };

struct RelPosProfile {
  std::map<int, double> window;  // offset -> ratio
  double self_ratio = 0.0;
  double other_ratio = 0.0;

  /// Largest ratio over the window offsets (offset 0 excluded).
  double max_offset_ratio() const noexcept;
};

inline const std::vector<int> kDefaultWindow = {-2, -1, 1, 2};

struct MetricsConfig {
  std::vector<int> window = kDefaultWindow;
  WeightingMode mode = WeightingMode::kMass;
  double relpos_threshold = 0.5;
  double nep_factor = 2.0;
  unsigned threads = 0;
};

AggregatedAttention aggregate(const AttentionMatrix& m);

/// Row-wise argmax offsets (ties go to the smallest column) bucketed into the
/// window, self (offset 0) and other. Rejects DEC_CROSS and non-square input.
RelPosProfile relative_position(const AttentionMatrix& m, std::span<const int> window = kDefaultWindow);

/// Normalized POS count histogram over `tokens`.
TagDistribution<UposTag> pos_baseline(std::span<const Token> tokens);
TagDistribution<UposTag> pos_weighted_distribution(std::span<const Token> tokens, std::span<const double> agg,
                                                   WeightingMode mode = WeightingMode::kMass);
/// D_KL(weighted || baseline) in nats.
double pos_kl(std::span<const Token> tokens, std::span<const double> agg, WeightingMode mode = WeightingMode::kMass);

/// Attention mass on entity tokens.
double nep(std::span<const Token> tokens, std::span<const double> agg);
/// Fraction of tokens that are entities.
double entity_fraction(std::span<const Token> tokens);

/// Normalized entity-class counts over PER/LOC/ORG/MISC. Throws NoEntities.
TagDistribution<NeClass> ne_baseline(std::span<const Token> tokens);
/// Per-class attention mass among entity tokens, normalized. Throws
/// NoEntities when there are no entity tokens or they carry zero mass.
TagDistribution<NeClass> ne_weighted_distribution(std::span<const Token> tokens, std::span<const double> agg);
double ne_kl(std::span<const Token> tokens, std::span<const double> agg);

// Article-level forms operate on the source tokens.
TagDistribution<UposTag> pos_weighted_distribution(const AnnotatedArticle& article, std::span<const double> agg,
                                                   WeightingMode mode = WeightingMode::kMass);
double pos_kl(const AnnotatedArticle& article, std::span<const double> agg, WeightingMode mode = WeightingMode::kMass);
double nep(const AnnotatedArticle& article, std::span<const double> agg);
double ne_kl(const AnnotatedArticle& article, std::span<const double> agg);

template <class Tag>
double kl_divergence(const TagDistribution<Tag>& p, const TagDistribution<Tag>& q) {
  double sum = 0.0;
  for (const auto& [tag, pv] : p) {
    if (pv <= 0.0) continue;
    sum += xlogx_over_y(pv, q.at(tag));
  }
  return sum < 0.0 ? 0.0 : sum;
}

struct MetricStat {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
  bool insufficient_n = true;  // n < 2: std is reported as 0
};

struct HeadProfile {
  MatrixKey key;
  std::size_t n_articles = 0;
  std::size_t excluded = 0;  // articles without entity tokens (left out of NEP/NE-KL)
  MetricStat pos_kl;
  MetricStat nep;
  MetricStat ne_kl;
  std::optional<RelPosProfile> relpos;  // square attention types only
  std::pair<UposTag, double> top_pos{UposTag::X, 0.0};
  std::optional<std::pair<NeClass, double>> top_ne;
  TagDistribution<UposTag> mean_pos_distribution;
  TagDistribution<NeClass> mean_ne_distribution;
  /// Mean entity-token fraction of the key sequence over all articles.
  double entity_baseline = 0.0;

  std::optional<double> relpos_score() const;
};

HeadProfile profile_head(const Corpus& corpus, const MatrixKey& key, const MetricsConfig& config = {});
std::vector<HeadProfile> profile_all(const Corpus& corpus, const MetricsConfig& config = {});

bool is_relpos_head(const HeadProfile& p, const MetricsConfig& config);
bool is_entity_head(const HeadProfile& p, const MetricsConfig& config);

nlohmann::json to_json(const RelPosProfile& r);
nlohmann::json to_json(const HeadProfile& p);
nlohmann::json to_json(std::span<const HeadProfile> profiles);

}  // namespace headscope
