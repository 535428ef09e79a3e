// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "headscope/corpus.hpp"
#include "headscope/transformer.hpp"

namespace headscope {

enum class DivergenceMeasure { kJsd, kTvd };

std::string_view to_string(DivergenceMeasure m) noexcept;
std::optional<DivergenceMeasure> parse_measure(std::string_view s) noexcept;

/// JSD in nats (0·ln 0 = 0), bounded by ln 2; TVD = ½Σ|p − q|, bounded by 1.
/// Throws LengthMismatch.
double divergence(std::span<const double> p, std::span<const double> q, DivergenceMeasure measure);

/// How later steps see earlier crafted distributions during the search.
///   kSequential:  step t is searched with the crafted rows of steps < t
///                 injected, i.e. in exactly the context of the final
///                 verification decode.
///   kIndependent: every step is searched against the untouched baseline.
enum class Conditioning { kSequential, kIndependent };

struct AdversarialConfig {
  MatrixKey target{AttentionType::DEC_CROSS, 0, 0};
  double epsilon = 0.01;
  int beam_size = 4;
  int max_len = 16;
  double length_penalty = 0.0;
  DivergenceMeasure measure = DivergenceMeasure::kJsd;
  int budget = 500;
  /// Initial proposal scale; adapted during the search.
  double step_size = 0.5;
  std::uint64_t seed = 0;
  Conditioning conditioning = Conditioning::kSequential;
  /// Also require that a beam decode with the candidate (and the prior rows)
  /// injected reproduces the baseline output. Checked only for candidates
  /// that would otherwise be accepted.
  bool preserve_output = true;
  unsigned threads = 1;  // used by kIndependent only

  /// Throws ConfigError.
  void validate(const ModelConfig& model) const;
  BeamConfig beam() const { return {beam_size, max_len, length_penalty}; }
};

struct TokenDelta {
  int token = 0;
  double original = 0.0;
  double perturbed = 0.0;
  double delta() const noexcept { return perturbed - original; }
};

struct StepResult {
  std::size_t step = 0;
  std::vector<double> original;
  std::vector<double> crafted;
  double divergence = 0.0;
  std::vector<TokenDelta> deltas;  // over the original step's top-K tokens
  double max_abs_delta = 0.0;
  bool feasible = true;
  bool output_preserved = true;  // meaningful when preserve_output is set
  int iterations = 0;
  int path_checks = 0;
  int accepted = 0;
  /// Best divergence after each iteration.
  std::vector<double> history;
};

struct AdversarialResult {
  AdversarialConfig config;
  std::vector<int> input_tokens;
  std::vector<int> baseline_tokens;
  std::vector<int> verification_tokens;
  std::vector<StepResult> steps;
  /// Top-K deltas re-measured from the verification decode (joint injection).
  std::vector<std::vector<TokenDelta>> verification_deltas;
  double mean_divergence = 0.0;
  double max_divergence = 0.0;
  double max_abs_delta = 0.0;
  bool constraint_satisfied = false;
  bool output_identical = false;
  long long iterations = 0;
};

/// Search state shared by the steps of one summary.
struct CraftContext {
  const Model& model;
  const EncoderOutput& encoded;
  const DecodeResult& baseline;
};

/// Searches one decoding step. `prior` holds crafted rows already fixed for
/// other steps (it must not contain this step's row).
StepResult craft_step(const CraftContext& ctx, std::size_t step, const AdversarialConfig& cfg,
                      const AttentionOverride& prior = {});

/// Baseline decode, one craft_step per output step, then one verification
/// decode with every crafted row injected.
AdversarialResult craft_summary(const Model& model, std::span<const int> input, const AdversarialConfig& cfg);

nlohmann::json to_json(const AdversarialResult& r);

using TagClass = std::variant<UposTag, NeClass>;

/// Entity classes first (PER, LOC, ORG, MISC), then universal POS tags.
std::optional<TagClass> parse_tag_class(std::string_view s) noexcept;
std::string to_string(const TagClass& tag);

struct ChangedToken {
  std::size_t position = 0;
  std::optional<int> baseline;
  std::optional<int> modified;
};

struct TargetedReport {
  MatrixKey target;
  TagClass tag = NeClass::PER;
  std::vector<std::size_t> tag_positions;
  std::vector<double> injected;
  std::vector<int> baseline_tokens;
  std::vector<int> modified_tokens;
  std::size_t edit_distance = 0;
  std::vector<double> step_jsd;  // output distributions, for t < min length
  std::vector<ChangedToken> changed;
};

/// Injects a distribution uniform over the source tokens of `tag` at every
/// decoding step of `cfg.target` (DEC_CROSS only), re-decodes without any
/// constraint and compares the outputs. Throws NoSuchTagInArticle.
TargetedReport targeted_redistribution(const Model& model, std::span<const int> input,
                                       std::span<const Token> annotations, const TagClass& tag,
                                       const AdversarialConfig& cfg);

nlohmann::json to_json(const TargetedReport& r);

std::size_t edit_distance(std::span<const int> a, std::span<const int> b);

}  // namespace headscope
