// SPDX-License-Identifier: Apache-2.0
#include "headscope/metrics.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "headscope/error.hpp"

namespace headscope {

using nlohmann::json;

namespace {

void require_aligned(std::span<const Token> tokens, std::span<const double> agg) {
  if (tokens.size() != agg.size()) {
    throw LengthMismatch("aggregated attention length does not match the token count",
                         {{"tokens", tokens.size()}, {"weights", agg.size()}});
  }
  if (tokens.empty()) throw LengthMismatch("metric needs at least one token");
}

std::vector<int> normalize_window(std::span<const int> window) {
  std::vector<int> w(window.begin(), window.end());
  std::sort(w.begin(), w.end());
  w.erase(std::unique(w.begin(), w.end()), w.end());
  if (w.empty()) throw ConfigError("relative-position window is empty");
  if (std::find(w.begin(), w.end(), 0) != w.end()) throw ConfigError("relative-position window must not contain 0");
  return w;
}

MetricStat to_stat(std::span<const double> xs) {
  const auto ms = mean_std(xs);
  return MetricStat{ms.mean, ms.std, ms.n, ms.n < 2};
}

double mean_of(std::span<const double> xs) { return xs.empty() ? 0.0 : compensated_sum(xs) / static_cast<double>(xs.size()); }

}  // namespace

double RelPosProfile::max_offset_ratio() const noexcept {
  double best = 0.0;
  for (const auto& [offset, ratio] : window) best = std::max(best, ratio);
  return best;
}

AggregatedAttention aggregate(const AttentionMatrix& m) {
  if (m.rows == 0 || m.cols == 0) throw DimensionError("cannot aggregate an empty matrix", {{"matrix", key_name(m.key)}});
  std::vector<CompensatedSum> cols(m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) cols[c].add(m.at(r, c));
  }
  AggregatedAttention out(m.cols);
  CompensatedSum total;
  for (std::size_t c = 0; c < m.cols; ++c) {
    out[c] = cols[c].value();
    total.add(out[c]);
  }
  const double z = total.value();
  for (double& v : out) v /= z;
  return out;
}

RelPosProfile relative_position(const AttentionMatrix& m, std::span<const int> window) {
  if (!is_square(m.key.type) || m.rows != m.cols) {
    throw NotSquare("relative position needs square self-attention, got " + key_name(m.key),
                    {{"matrix", key_name(m.key)}, {"rows", m.rows}, {"cols", m.cols}});
  }
  const auto offsets = normalize_window(window);
  std::map<int, std::size_t> counts;
  for (int o : offsets) counts[o] = 0;
  std::size_t self = 0, other = 0;
  for (std::size_t t = 0; t < m.rows; ++t) {
    const auto row = m.row(t);
    const auto j = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const long offset = static_cast<long>(j) - static_cast<long>(t);
    if (offset == 0) {
      ++self;
    } else if (auto it = counts.find(static_cast<int>(offset)); it != counts.end()) {
      ++it->second;
    } else {
      ++other;
    }
  }
  const auto n = static_cast<double>(m.rows);
  RelPosProfile p;
  for (const auto& [o, c] : counts) p.window[o] = static_cast<double>(c) / n;
  p.self_ratio = static_cast<double>(self) / n;
  p.other_ratio = static_cast<double>(other) / n;
  return p;
}

TagDistribution<UposTag> pos_baseline(std::span<const Token> tokens) {
  if (tokens.empty()) throw LengthMismatch("POS baseline needs at least one token");
  std::map<UposTag, std::size_t> counts;
  for (const auto& t : tokens) ++counts[t.pos];
  TagDistribution<UposTag> out;
  for (const auto& [tag, c] : counts) out[tag] = static_cast<double>(c) / static_cast<double>(tokens.size());
  return out;
}

TagDistribution<UposTag> pos_weighted_distribution(std::span<const Token> tokens, std::span<const double> agg,
                                                   WeightingMode mode) {
  require_aligned(tokens, agg);
  std::map<UposTag, CompensatedSum> mass;
  std::map<UposTag, std::size_t> counts;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    mass[tokens[i].pos].add(agg[i]);
    ++counts[tokens[i].pos];
  }
  TagDistribution<UposTag> out;
  CompensatedSum total;
  for (const auto& [tag, m] : mass) {
    double w = m.value();
    if (mode == WeightingMode::kLiteral) w *= static_cast<double>(counts[tag]);
    out[tag] = w;
    total.add(w);
  }
  const double z = total.value();
  if (!(z > 0.0)) throw LengthMismatch("aggregated attention carries no mass");
  for (auto& [tag, w] : out) w /= z;
  return out;
}

double pos_kl(std::span<const Token> tokens, std::span<const double> agg, WeightingMode mode) {
  return kl_divergence(pos_weighted_distribution(tokens, agg, mode), pos_baseline(tokens));
}

double nep(std::span<const Token> tokens, std::span<const double> agg) {
  require_aligned(tokens, agg);
  CompensatedSum s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].ne != NeClass::NONE) s.add(agg[i]);
  }
  return s.value();
}

double entity_fraction(std::span<const Token> tokens) {
  if (tokens.empty()) return 0.0;
  const auto n = std::count_if(tokens.begin(), tokens.end(), [](const Token& t) { return t.ne != NeClass::NONE; });
  return static_cast<double>(n) / static_cast<double>(tokens.size());
}

TagDistribution<NeClass> ne_baseline(std::span<const Token> tokens) {
  std::map<NeClass, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& t : tokens) {
    if (t.ne == NeClass::NONE) continue;
    ++counts[t.ne];
    ++total;
  }
  if (total == 0) throw NoEntities("article has no entity tokens");
  TagDistribution<NeClass> out;
  for (const auto& [cls, c] : counts) out[cls] = static_cast<double>(c) / static_cast<double>(total);
  return out;
}

TagDistribution<NeClass> ne_weighted_distribution(std::span<const Token> tokens, std::span<const double> agg) {
  require_aligned(tokens, agg);
  std::map<NeClass, CompensatedSum> mass;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].ne != NeClass::NONE) mass[tokens[i].ne].add(agg[i]);
  }
  if (mass.empty()) throw NoEntities("article has no entity tokens");
  TagDistribution<NeClass> out;
  CompensatedSum total;
  for (const auto& [cls, m] : mass) {
    out[cls] = m.value();
    total.add(m.value());
  }
  const double z = total.value();
  if (!(z > 0.0)) throw NoEntities("entity tokens carry no attention mass");
  for (auto& [cls, w] : out) w /= z;
  return out;
}

double ne_kl(std::span<const Token> tokens, std::span<const double> agg) {
  return kl_divergence(ne_weighted_distribution(tokens, agg), ne_baseline(tokens));
}

TagDistribution<UposTag> pos_weighted_distribution(const AnnotatedArticle& article, std::span<const double> agg,
                                                   WeightingMode mode) {
  return pos_weighted_distribution(std::span<const Token>(article.source_tokens), agg, mode);
}
double pos_kl(const AnnotatedArticle& article, std::span<const double> agg, WeightingMode mode) {
  return pos_kl(std::span<const Token>(article.source_tokens), agg, mode);
}
double nep(const AnnotatedArticle& article, std::span<const double> agg) {
  return nep(std::span<const Token>(article.source_tokens), agg);
}
double ne_kl(const AnnotatedArticle& article, std::span<const double> agg) {
  return ne_kl(std::span<const Token>(article.source_tokens), agg);
}

std::optional<double> HeadProfile::relpos_score() const {
  if (!relpos) return std::nullopt;
  return relpos->max_offset_ratio();
}

HeadProfile profile_head(const Corpus& corpus, const MatrixKey& key, const MetricsConfig& config) {
  // Reduce in article-id order so results do not depend on load order.
  std::vector<const AnnotatedArticle*> ordered;
  ordered.reserve(corpus.articles.size());
  for (const auto& a : corpus.articles) ordered.push_back(&a);
  std::sort(ordered.begin(), ordered.end(),
            [](const AnnotatedArticle* a, const AnnotatedArticle* b) { return a->article_id < b->article_id; });

  const bool square = is_square(key.type);
  const auto window = normalize_window(config.window);

  std::vector<double> pos_kls, neps, ne_kls, fractions;
  std::array<std::vector<double>, kUposCount> pos_dist;
  std::array<std::vector<double>, kEntityClassCount> ne_dist;
  std::map<int, std::vector<double>> win_ratios;
  std::vector<double> self_ratios, other_ratios;

  HeadProfile p;
  p.key = key;
  for (const auto* article : ordered) {
    auto it = article->matrices.find(key);
    if (it == article->matrices.end()) {
      throw MissingMatrix("article " + article->article_id + " has no matrix " + key_name(key),
                          {{"id", article->article_id}, {"matrix", key_name(key)}});
    }
    const auto tokens = article->key_tokens(key.type);
    const auto agg = aggregate(it->second);
    ++p.n_articles;

    pos_kls.push_back(pos_kl(tokens, agg, config.mode));
    const auto w = pos_weighted_distribution(tokens, agg, config.mode);
    for (auto tag : kAllUpos) {
      auto f = w.find(tag);
      pos_dist[static_cast<std::size_t>(tag)].push_back(f == w.end() ? 0.0 : f->second);
    }

    fractions.push_back(entity_fraction(tokens));
    if (fractions.back() == 0.0) {
      ++p.excluded;
    } else {
      neps.push_back(nep(tokens, agg));
      try {
        const auto wn = ne_weighted_distribution(tokens, agg);
        ne_kls.push_back(kl_divergence(wn, ne_baseline(tokens)));
        for (auto cls : kEntityClasses) {
          auto f = wn.find(cls);
          ne_dist[static_cast<std::size_t>(cls)].push_back(f == wn.end() ? 0.0 : f->second);
        }
      } catch (const NoEntities&) {
        // entity tokens present but carrying zero mass: NE-KL undefined
      }
    }

    if (square) {
      const auto rp = relative_position(it->second, window);
      for (const auto& [o, r] : rp.window) win_ratios[o].push_back(r);
      self_ratios.push_back(rp.self_ratio);
      other_ratios.push_back(rp.other_ratio);
    }
  }

  p.pos_kl = to_stat(pos_kls);
  p.nep = to_stat(neps);
  p.ne_kl = to_stat(ne_kls);
  p.entity_baseline = mean_of(fractions);

  for (auto tag : kAllUpos) p.mean_pos_distribution[tag] = mean_of(pos_dist[static_cast<std::size_t>(tag)]);
  p.top_pos = {kAllUpos.front(), p.mean_pos_distribution[kAllUpos.front()]};
  for (auto tag : kAllUpos) {
    if (p.mean_pos_distribution[tag] > p.top_pos.second) p.top_pos = {tag, p.mean_pos_distribution[tag]};
  }
  if (!ne_kls.empty()) {
    for (auto cls : kEntityClasses) p.mean_ne_distribution[cls] = mean_of(ne_dist[static_cast<std::size_t>(cls)]);
    std::pair<NeClass, double> best{kEntityClasses.front(), p.mean_ne_distribution[kEntityClasses.front()]};
    for (auto cls : kEntityClasses) {
      if (p.mean_ne_distribution[cls] > best.second) best = {cls, p.mean_ne_distribution[cls]};
    }
    p.top_ne = best;
  }

  if (square) {
    RelPosProfile rp;
    for (int o : window) rp.window[o] = mean_of(win_ratios[o]);
    rp.self_ratio = mean_of(self_ratios);
    rp.other_ratio = mean_of(other_ratios);
    p.relpos = rp;
  }
  return p;
}

std::vector<HeadProfile> profile_all(const Corpus& corpus, const MetricsConfig& config) {
  if (corpus.articles.empty()) return {};
  const auto keys = corpus.manifest.keys();
  std::vector<HeadProfile> out(keys.size());
  parallel_for(keys.size(), config.threads, [&](std::size_t i) {
    try {
      out[i] = profile_head(corpus, keys[i], config);
    } catch (Error& e) {
      auto detail = e.detail();
      detail["head"] = key_name(keys[i]);
      throw Error(e.code(), std::string(e.what()) + " (head " + key_name(keys[i]) + ")", detail);
    }
  });
  return out;
}

bool is_relpos_head(const HeadProfile& p, const MetricsConfig& config) {
  auto score = p.relpos_score();
  return score && *score >= config.relpos_threshold;
}

bool is_entity_head(const HeadProfile& p, const MetricsConfig& config) {
  return p.nep.n > 0 && p.entity_baseline > 0.0 && p.nep.mean >= config.nep_factor * p.entity_baseline;
}

json to_json(const RelPosProfile& r) {
  json window = json::object();
  for (const auto& [o, ratio] : r.window) window[std::to_string(o)] = ratio;
  return {{"window", window}, {"self", r.self_ratio}, {"other", r.other_ratio}, {"score", r.max_offset_ratio()}};
}

namespace {
json stat_json(const MetricStat& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}, {"insufficient_n", s.insufficient_n}};
}
}  // namespace

json to_json(const HeadProfile& p) {
  json pos_dist = json::object();
  for (const auto& [tag, v] : p.mean_pos_distribution) pos_dist[std::string(to_string(tag))] = v;
  json ne_dist = json::object();
  for (const auto& [cls, v] : p.mean_ne_distribution) ne_dist[std::string(to_string(cls))] = v;
  json j = {{"type", to_string(p.key.type)},
            {"layer", p.key.layer},
            {"head", p.key.head},
            {"n_articles", p.n_articles},
            {"excluded", p.excluded},
            {"entity_baseline", p.entity_baseline},
            {"pos_kl", stat_json(p.pos_kl)},
            {"nep", stat_json(p.nep)},
            {"ne_kl", stat_json(p.ne_kl)},
            {"relpos", p.relpos ? to_json(*p.relpos) : json(nullptr)},
            {"top_pos", {{"tag", to_string(p.top_pos.first)}, {"ratio", p.top_pos.second}}},
            {"top_ne", p.top_ne ? json{{"tag", to_string(p.top_ne->first)}, {"ratio", p.top_ne->second}} : json(nullptr)},
            {"pos_distribution", pos_dist},
            {"ne_distribution", ne_dist}};
  return j;
}

json to_json(std::span<const HeadProfile> profiles) {
  json arr = json::array();
  for (const auto& p : profiles) arr.push_back(to_json(p));
  return arr;
}

}  // namespace headscope
