// SPDX-License-Identifier: Apache-2.0
#include "headscope/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "headscope/error.hpp"
#include "headscope/numeric.hpp"

namespace headscope {

using nlohmann::json;

namespace {

constexpr double kMaxSigma = 4.0;
constexpr double kMinSigma = 1e-4;
// Rounding noise allowed on top of ε; re-injecting a recorded row moves
// probabilities by ~1e-16.
constexpr double kDeltaSlack = 1e-12;

class Proposals {
 public:
  Proposals(std::uint64_t seed, std::size_t step) : gen_(seed ^ (0x9E3779B97F4A7C15ULL * (step + 1))) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (spare_) {
      const double z = *spare_;
      spare_.reset();
      return z;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  std::vector<double> propose(const std::vector<double>& current, double sigma) {
    std::vector<double> x(current.size());
    const double pick = uniform();
    if (pick < 0.5) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = current[i] * std::exp(sigma * normal());
    } else if (pick < 0.8) {
      const std::size_t j = index(x.size());
      const double lambda = std::min(1.0, sigma * uniform());
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = (1.0 - lambda) * current[i];
      x[j] += lambda;
    } else {
      const double gamma = std::exp(sigma * normal());
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = current[i] > 0.0 ? std::pow(current[i], gamma) : 0.0;
    }
    return x;
  }

 private:
  std::mt19937_64 gen_;
  std::optional<double> spare_;
};

bool normalize(std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) {
    if (!std::isfinite(v) || v < 0.0) return false;
    s += v;
  }
  if (!(s > 0.0) || !std::isfinite(s)) return false;
  for (double& v : x) v /= s;
  double check = 0.0;
  for (double v : x) check += v;
  return std::fabs(check - 1.0) <= 1e-9;
}

std::vector<TokenDelta> top_k_deltas(std::span<const TopEntry> original_top, std::span<const double> perturbed) {
  std::vector<TokenDelta> out;
  out.reserve(original_top.size());
  for (const auto& e : original_top) out.push_back({e.token, e.prob, perturbed[static_cast<std::size_t>(e.token)]});
  return out;
}

double max_abs(std::span<const TokenDelta> deltas) {
  double m = 0.0;
  for (const auto& d : deltas) m = std::max(m, std::fabs(d.delta()));
  return m;
}

struct Evaluation {
  std::vector<double> point;
  std::vector<TokenDelta> deltas;
  double violation = 0.0;  // max |Δ| over the original top-K
  double divergence = 0.0;
  bool within_epsilon = false;
  bool path_ok = true;
  bool feasible = false;

  // Infeasible points are ranked by how far they are from feasibility; a
  // broken output path counts as worse than any probability violation.
  double grade() const noexcept { return violation + (path_ok ? 0.0 : 1.0); }
};

bool better(const Evaluation& a, const Evaluation& b) {
  if (a.feasible != b.feasible) return a.feasible;
  if (!a.feasible) return a.grade() < b.grade();
  return a.divergence > b.divergence;
}

OverrideKey row_key(const MatrixKey& target, std::size_t step) { return {target.type, target.layer, target.head, step}; }

json key_json(const MatrixKey& k) { return {{"type", to_string(k.type)}, {"layer", k.layer}, {"head", k.head}}; }

json deltas_json(std::span<const TokenDelta> deltas) {
  json out = json::array();
  for (const auto& d : deltas) {
    out.push_back({{"token", d.token}, {"original", d.original}, {"perturbed", d.perturbed}, {"delta", d.delta()}});
  }
  return out;
}

}  // namespace

std::string_view to_string(DivergenceMeasure m) noexcept { return m == DivergenceMeasure::kJsd ? "jsd" : "tvd"; }

std::optional<DivergenceMeasure> parse_measure(std::string_view s) noexcept {
  if (s == "jsd" || s == "JSD") return DivergenceMeasure::kJsd;
  if (s == "tvd" || s == "TVD") return DivergenceMeasure::kTvd;
  return std::nullopt;
}

double divergence(std::span<const double> p, std::span<const double> q, DivergenceMeasure measure) {
  if (p.size() != q.size()) {
    throw LengthMismatch("distributions differ in length", {{"p", p.size()}, {"q", q.size()}});
  }
  CompensatedSum sum;
  if (measure == DivergenceMeasure::kTvd) {
    for (std::size_t i = 0; i < p.size(); ++i) sum.add(std::fabs(p[i] - q[i]));
    return 0.5 * sum.value();
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    sum.add(0.5 * xlogx_over_y(p[i], m));
    sum.add(0.5 * xlogx_over_y(q[i], m));
  }
  return std::clamp(sum.value(), 0.0, std::numbers::ln2);
}

void AdversarialConfig::validate(const ModelConfig& model) const {
  json d = {{"type", to_string(target.type)}, {"layer", target.layer}, {"head", target.head}};
  if (target.type == AttentionType::ENC_SELF) throw ConfigError("adversarial target must be a decoder head", d);
  if (target.layer < 0 || target.layer >= model.n_layers || target.head < 0 || target.head >= model.n_heads) {
    throw ConfigError("adversarial target head is outside the model", d);
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]", {{"epsilon", epsilon}});
  if (beam_size < 1) throw ConfigError("beam size must be >= 1", {{"beam_size", beam_size}});
  if (budget < 1) throw ConfigError("budget must be >= 1", {{"budget", budget}});
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("step size must be positive", {{"step_size", step_size}});
  if (max_len < 1 || max_len + 1 > model.max_positions) throw ConfigError("max_len out of range", {{"max_len", max_len}});
}

StepResult craft_step(const CraftContext& ctx, std::size_t step, const AdversarialConfig& cfg, const AttentionOverride& prior) {
  const auto& baseline = ctx.baseline;
  if (step >= baseline.tokens.size()) throw LengthError("step beyond the baseline output", {{"step", step}});
  const auto it = baseline.attention.find(cfg.target);
  if (it == baseline.attention.end()) throw MissingMatrix("baseline has no matrix " + key_name(cfg.target));
  const auto& matrix = it->second;
  const std::size_t n_keys = cfg.target.type == AttentionType::DEC_SELF ? step + 1 : matrix.cols();
  const auto row = matrix.row(step);

  StepResult result;
  result.step = step;
  result.original.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(n_keys));
  const auto& original_top = baseline.top_k[step];
  const std::span<const int> prefix(baseline.tokens.data(), step);

  AttentionOverride ov = prior;
  ov.set_decoder_path(baseline.tokens);
  auto evaluate = [&](std::vector<double> point) {
    Evaluation e;
    ov.set(row_key(cfg.target, step), point);
    const auto probs = ctx.model.next_token_probs(ctx.encoded, prefix, &ov);
    e.deltas = top_k_deltas(original_top, probs);
    e.violation = max_abs(e.deltas);
    e.within_epsilon = e.violation <= cfg.epsilon + kDeltaSlack;
    e.feasible = e.within_epsilon;
    e.divergence = divergence(point, result.original, cfg.measure);
    e.point = std::move(point);
    return e;
  };

  // Must run right after evaluate(), while `ov` holds the candidate row.
  auto check_path = [&](Evaluation& e) {
    if (!cfg.preserve_output) return;
    ++result.path_checks;
    e.path_ok = ctx.model.beam_decode(ctx.encoded, cfg.beam(), &ov).tokens == baseline.tokens;
    e.feasible = e.within_epsilon && e.path_ok;
  };

  Evaluation current = evaluate(result.original);
  if (!current.within_epsilon && prior.empty()) {
    throw InfeasibleStart("injecting the original distribution violates the constraint",
                          {{"step", step}, {"violation", current.violation}});
  }
  check_path(current);

  Proposals rng(cfg.seed, step);
  double sigma = cfg.step_size;
  result.history.reserve(static_cast<std::size_t>(cfg.budget));
  for (int iter = 0; iter < cfg.budget; ++iter) {
    auto x = rng.propose(current.point, sigma);
    bool accepted = false;
    if (normalize(x)) {
      auto candidate = evaluate(std::move(x));
      if (better(candidate, current)) check_path(candidate);
      if (better(candidate, current)) {
        current = std::move(candidate);
        accepted = true;
      }
    }
    if (accepted) {
      ++result.accepted;
      sigma = std::min(sigma * 1.5, kMaxSigma);
    } else {
      sigma = std::max(sigma * 0.9, kMinSigma);
    }
    result.history.push_back(current.feasible ? current.divergence : 0.0);
    ++result.iterations;
  }

  result.crafted = std::move(current.point);
  result.divergence = current.feasible ? current.divergence : 0.0;
  result.deltas = std::move(current.deltas);
  result.max_abs_delta = current.violation;
  result.feasible = current.feasible;
  result.output_preserved = current.path_ok;
  return result;
}

AdversarialResult craft_summary(const Model& model, std::span<const int> input, const AdversarialConfig& cfg) {
  cfg.validate(model.config());
  AdversarialResult r;
  r.config = cfg;
  r.input_tokens.assign(input.begin(), input.end());

  const auto encoded = model.encode(input);
  const auto baseline = model.beam_decode(encoded, cfg.beam());
  r.baseline_tokens = baseline.tokens;
  const CraftContext ctx{model, encoded, baseline};
  const std::size_t n_steps = baseline.tokens.size();

  auto run_step = [&](std::size_t t, const AttentionOverride& prior) {
    try {
      return craft_step(ctx, t, cfg, prior);
    } catch (const InfeasibleStart& e) {
      json d = e.detail();
      d["step"] = t;
      throw InfeasibleStart(e.what(), d);
    }
  };

  AttentionOverride crafted;
  crafted.set_decoder_path(baseline.tokens);
  r.steps.resize(n_steps);
  if (cfg.conditioning == Conditioning::kSequential) {
    for (std::size_t t = 0; t < n_steps; ++t) {
      r.steps[t] = run_step(t, crafted);
      crafted.set(row_key(cfg.target, t), r.steps[t].crafted);
    }
  } else {
    const AttentionOverride none;
    parallel_for(n_steps, cfg.threads, [&](std::size_t t) { r.steps[t] = run_step(t, none); });
    for (std::size_t t = 0; t < n_steps; ++t) crafted.set(row_key(cfg.target, t), r.steps[t].crafted);
  }

  const auto verification = model.beam_decode(encoded, cfg.beam(), &crafted);
  r.verification_tokens = verification.tokens;
  r.output_identical = verification.tokens == baseline.tokens;

  const auto measured = model.replay(encoded, baseline.tokens, static_cast<std::size_t>(cfg.beam_size), &crafted);
  r.constraint_satisfied = true;
  CompensatedSum div_sum;
  for (std::size_t t = 0; t < n_steps; ++t) {
    r.verification_deltas.push_back(top_k_deltas(baseline.top_k[t], measured.step_probs[t]));
    const double m = max_abs(r.verification_deltas.back());
    r.max_abs_delta = std::max(r.max_abs_delta, m);
    if (m > cfg.epsilon + kDeltaSlack) r.constraint_satisfied = false;
    div_sum.add(r.steps[t].divergence);
    r.max_divergence = std::max(r.max_divergence, r.steps[t].divergence);
    r.iterations += r.steps[t].iterations;
  }
  r.mean_divergence = n_steps ? div_sum.value() / static_cast<double>(n_steps) : 0.0;
  return r;
}

json to_json(const AdversarialResult& r) {
  const auto& c = r.config;
  json steps = json::array();
  for (std::size_t t = 0; t < r.steps.size(); ++t) {
    const auto& s = r.steps[t];
    steps.push_back({{"step", s.step},
                     {"original", s.original},
                     {"crafted", s.crafted},
                     {"divergence", s.divergence},
                     {"feasible", s.feasible},
                     {"output_preserved", s.output_preserved},
                     {"path_checks", s.path_checks},
                     {"iterations", s.iterations},
                     {"accepted", s.accepted},
                     {"max_abs_delta", s.max_abs_delta},
                     {"deltas", deltas_json(s.deltas)},
                     {"verification_deltas", deltas_json(r.verification_deltas[t])},
                     {"history", s.history}});
  }
  return {{"mode", "craft"},
          {"target", key_json(c.target)},
          {"config",
           {{"epsilon", c.epsilon},
            {"beam_size", c.beam_size},
            {"max_len", c.max_len},
            {"length_penalty", c.length_penalty},
            {"measure", to_string(c.measure)},
            {"budget", c.budget},
            {"step_size", c.step_size},
            {"seed", c.seed},
            {"conditioning", c.conditioning == Conditioning::kSequential ? "sequential" : "independent"},
            {"preserve_output", c.preserve_output}}},
          {"input_tokens", r.input_tokens},
          {"baseline_tokens", r.baseline_tokens},
          {"verification_tokens", r.verification_tokens},
          {"steps", steps},
          {"summary",
           {{"mean_divergence", r.mean_divergence},
            {"max_divergence", r.max_divergence},
            {"max_abs_delta", r.max_abs_delta},
            {"constraint_satisfied", r.constraint_satisfied},
            {"output_identical", r.output_identical},
            {"iterations", r.iterations}}}};
}

std::optional<TagClass> parse_tag_class(std::string_view s) noexcept {
  for (auto ne : kEntityClasses) {
    if (s == to_string(ne)) return TagClass{ne};
  }
  if (auto pos = parse_upos(s)) return TagClass{*pos};
  return std::nullopt;
}

std::string to_string(const TagClass& tag) {
  return std::visit([](auto t) { return std::string(to_string(t)); }, tag);
}

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

TargetedReport targeted_redistribution(const Model& model, std::span<const int> input, std::span<const Token> annotations,
                                       const TagClass& tag, const AdversarialConfig& cfg) {
  cfg.validate(model.config());
  if (cfg.target.type != AttentionType::DEC_CROSS) {
    throw ConfigError("targeted redistribution supports DEC_CROSS heads only", {{"type", to_string(cfg.target.type)}});
  }
  if (annotations.size() != input.size()) {
    throw LengthMismatch("annotations do not align with the input", {{"tokens", input.size()}, {"annotations", annotations.size()}});
  }

  TargetedReport r;
  r.target = cfg.target;
  r.tag = tag;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const bool match = std::visit(
        [&](auto t) {
          if constexpr (std::is_same_v<decltype(t), UposTag>) {
            return annotations[i].pos == t;
          } else {
            return annotations[i].ne == t;
          }
        },
        tag);
    if (match) r.tag_positions.push_back(i);
  }
  if (r.tag_positions.empty()) throw NoSuchTagInArticle("article has no token tagged " + to_string(tag), {{"tag", to_string(tag)}});

  r.injected.assign(input.size(), 0.0);
  for (auto i : r.tag_positions) r.injected[i] = 1.0 / static_cast<double>(r.tag_positions.size());

  AttentionOverride ov;
  for (int t = 0; t < cfg.max_len; ++t) ov.set(row_key(cfg.target, static_cast<std::size_t>(t)), r.injected);

  const auto encoded = model.encode(input);
  const auto baseline = model.beam_decode(encoded, cfg.beam());
  const auto modified = model.beam_decode(encoded, cfg.beam(), &ov);
  r.baseline_tokens = baseline.tokens;
  r.modified_tokens = modified.tokens;
  r.edit_distance = edit_distance(baseline.tokens, modified.tokens);
  const std::size_t common = std::min(baseline.tokens.size(), modified.tokens.size());
  for (std::size_t t = 0; t < common; ++t) {
    r.step_jsd.push_back(divergence(baseline.step_probs[t], modified.step_probs[t], DivergenceMeasure::kJsd));
  }
  const std::size_t longest = std::max(baseline.tokens.size(), modified.tokens.size());
  for (std::size_t t = 0; t < longest; ++t) {
    ChangedToken c;
    c.position = t;
    if (t < baseline.tokens.size()) c.baseline = baseline.tokens[t];
    if (t < modified.tokens.size()) c.modified = modified.tokens[t];
    if (c.baseline != c.modified) r.changed.push_back(c);
  }
  return r;
}

json to_json(const TargetedReport& r) {
  json changed = json::array();
  for (const auto& c : r.changed) {
    changed.push_back({{"position", c.position},
                       {"baseline", c.baseline ? json(*c.baseline) : json(nullptr)},
                       {"modified", c.modified ? json(*c.modified) : json(nullptr)}});
  }
  return {{"mode", "targeted"},
          {"target", key_json(r.target)},
          {"tag", to_string(r.tag)},
          {"tag_positions", r.tag_positions},
          {"injected", r.injected},
          {"baseline_tokens", r.baseline_tokens},
          {"modified_tokens", r.modified_tokens},
          {"edit_distance", r.edit_distance},
          {"step_jsd", r.step_jsd},
          {"changed", changed}};
}

}  // namespace headscope
