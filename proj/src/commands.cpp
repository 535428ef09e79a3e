// SPDX-License-Identifier: Apache-2.0
#include "headscope/commands.hpp"

#include <fstream>
#include <map>

#include <CLI11.hpp>

#include "headscope/adversarial.hpp"
#include "headscope/error.hpp"
#include "headscope/export.hpp"
#include "headscope/report.hpp"
#include "headscope/service.hpp"

namespace headscope {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string(), {{"path", path.string()}});
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write to " + path.string(), {{"path", path.string()}});
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message(), {{"path", dir.string()}});
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void require_dump(const RunConfig& cfg) {
  if (cfg.dump.empty()) throw ConfigError("missing --dump");
  if (!fs::exists(cfg.dump)) throw MissingFile("dump not found: " + cfg.dump.string(), {{"path", cfg.dump.string()}});
}

void require_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("missing --out");
}

void write_reports(const Corpus& corpus, std::span<const HeadProfile> profiles, const RunConfig& cfg) {
  const TableSpec spec{cfg.top_k};
  for (auto type : corpus.manifest.attention_types) {
    const auto rows = profiles_of_type(profiles, type);
    const auto stem = lower(to_string(type));
    write_text(cfg.out / (stem + "_table.md"), render_table(rows, spec, TableFormat::kMarkdown));
    write_text(cfg.out / (stem + "_table.csv"), render_table(rows, spec, TableFormat::kCsv));
    write_text(cfg.out / (stem + "_table.json"), render_table(rows, spec, TableFormat::kJson));
    if (is_square(type)) {
      write_text(cfg.out / ("relpos_" + stem + ".csv"), render_relpos_grid(rows, type, GridFormat::kCsv));
      write_text(cfg.out / ("relpos_" + stem + ".json"), render_relpos_grid(rows, type, GridFormat::kJson));
      write_text(cfg.out / ("relpos_" + stem + ".svg"), render_relpos_grid(rows, type, GridFormat::kSvg));
    }
  }
}

std::vector<int> ids_from_tokens(std::span<const Token> tokens, const SyntheticLexicon& lexicon) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto id = lexicon.id_of(tokens[i].text);
    if (!id) throw VocabError("token is not in the model vocabulary", {{"index", i}, {"text", tokens[i].text}});
    ids.push_back(*id);
  }
  return ids;
}

// Flags each subcommand accepts; `--d-model` maps to config key `d_model`.
const std::map<std::string, std::vector<std::string>>& subcommand_keys() {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"analyze", {"dump", "out", "mode", "window", "relpos_threshold", "nep_factor", "top_k", "threads"}},
      {"demo-model",
       {"seed", "layers", "heads", "d_model", "d_ff", "vocab", "articles", "out", "beam", "max_len", "length_penalty",
        "entity_fraction", "threads"}},
      {"adversarial",
       {"head", "epsilon", "beam", "measure", "budget", "seed", "target_tag", "out", "dump", "article", "weights",
        "step_size", "max_len", "length_penalty", "conditioning", "preserve_output", "layers", "heads", "d_model",
        "d_ff", "vocab", "model_seed", "input_len", "entity_fraction", "threads"}},
      {"serve",
       {"dump", "host", "port", "static", "mode", "window", "relpos_threshold", "nep_factor", "top_k", "threads"}},
  };
  return keys;
}

std::string flag_name(std::string key) {
  for (char& c : key) c = c == '_' ? '-' : c;
  return "--" + key;
}

}  // namespace

int cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_dump(cfg);
  require_out(cfg);
  const auto corpus = load_corpus(cfg.dump, cfg.threads);
  const auto metrics = cfg.metrics();
  const auto profiles = profile_all(corpus, metrics);
  ensure_dir(cfg.out);
  write_text(cfg.out / "profiles.json", to_json(profiles).dump(2) + "\n");
  if (corpus.articles.empty()) {
    err << "warning: dump has no articles; wrote empty profiles\n";
    return kExitOk;
  }
  write_reports(corpus, profiles, cfg);

  for (auto type : corpus.manifest.attention_types) {
    std::size_t n = 0, relpos = 0, entity = 0;
    for (const auto& p : profiles) {
      if (p.key.type != type) continue;
      ++n;
      relpos += is_relpos_head(p, metrics) ? 1 : 0;
      entity += is_entity_head(p, metrics) ? 1 : 0;
    }
    out << to_string(type) << ": " << n << " heads, ";
    if (is_square(type)) {
      out << relpos << " relative-position heads";
    } else {
      out << "relative position n/a";
    }
    out << ", " << entity << " entity heads\n";
  }
  return kExitOk;
}

int cmd_demo(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  require_out(cfg);
  const auto model = Model::random(cfg.model());
  const SyntheticLexicon lexicon(model.config().vocab_size);
  const auto docs = synthetic_documents(cfg.articles, lexicon, cfg.seed, cfg.entity_fraction);
  const auto manifest = export_dump(model, docs, lexicon, cfg.beam_config(), cfg.out, cfg.threads);
  save_weights(model, cfg.out / "model.weights");
  out << "wrote " << manifest.articles.size() << " articles (" << manifest.n_layers << " layers x " << manifest.n_heads
      << " heads) to " << cfg.out.string() << "\n";
  return kExitOk;
}

int cmd_adversarial(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const auto adv = cfg.adversarial();
  std::optional<Model> model;
  std::vector<int> input;
  std::vector<Token> annotations;

  if (!cfg.dump.empty()) {
    require_dump(cfg);
    const auto weights = cfg.weights.empty() ? cfg.dump / "model.weights" : cfg.weights;
    model.emplace(load_weights(weights));
    const auto manifest = load_manifest(cfg.dump);
    if (manifest.articles.empty()) throw ConfigError("dump has no articles to attack");
    const auto article = load_article(manifest, cfg.article.empty() ? manifest.articles.front().id : cfg.article);
    const SyntheticLexicon lexicon(model->config().vocab_size);
    input = ids_from_tokens(article.source_tokens, lexicon);
    annotations = article.source_tokens;
  } else {
    auto mc = cfg.model();
    mc.seed = cfg.model_seed;
    model.emplace(cfg.weights.empty() ? Model::random(mc) : load_weights(cfg.weights));
    const SyntheticLexicon lexicon(model->config().vocab_size);
    const auto doc = synthetic_document("input", cfg.input_len, lexicon, cfg.model_seed, cfg.entity_fraction);
    input = doc.token_ids;
    annotations = doc.tokens;
  }

  json report;
  int code = kExitOk;
  std::string summary;
  if (!cfg.target_tag.empty()) {
    const auto tag = parse_tag_class(cfg.target_tag);
    if (!tag) throw ConfigError("unknown target tag " + cfg.target_tag, {{"target_tag", cfg.target_tag}});
    const auto r = targeted_redistribution(*model, input, annotations, *tag, adv);
    report = to_json(r);
    summary = "targeted " + to_string(*tag) + ": edit_distance=" + std::to_string(r.edit_distance) +
              " changed_tokens=" + std::to_string(r.changed.size());
  } else {
    const auto r = craft_summary(*model, input, adv);
    report = to_json(r);
    code = r.constraint_satisfied && r.output_identical ? kExitOk : kExitCheckFailed;
    summary = std::string("constraint_satisfied=") + (r.constraint_satisfied ? "true" : "false") +
              " output_identical=" + (r.output_identical ? "true" : "false") +
              " mean_divergence=" + std::to_string(r.mean_divergence) + " max_divergence=" + std::to_string(r.max_divergence);
  }

  const auto text = report.dump(2) + "\n";
  if (cfg.out.empty()) {
    out << text;
  } else {
    if (cfg.out.has_parent_path()) ensure_dir(cfg.out.parent_path());
    write_text(cfg.out, text);
    out << summary << "\n";
  }
  return code;
}

int cmd_serve(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  require_dump(cfg);
  auto corpus = load_corpus(cfg.dump, cfg.threads);
  auto profiles = profile_all(corpus, cfg.metrics());
  const Api api(std::move(corpus), std::move(profiles));
  HttpService service(api, cfg.static_dir);
  const int port = service.bind(cfg.host, cfg.port);
  out << "serving " << cfg.dump.string() << " on http://" << cfg.host << ":" << port << std::endl;
  service.listen();
  return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention head specialization analysis"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* app = nullptr;
    std::string config;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
  };
  std::map<std::string, Sub> subs;
  const std::map<std::string, std::string> descriptions = {
      {"analyze", "profile every head of a dump and write reports"},
      {"demo-model", "write a dump from a seeded toy model"},
      {"adversarial", "craft adversarial attention for one decoder head"},
      {"serve", "serve the JSON API for a dump"}};

  for (const auto& [name, keys] : subcommand_keys()) {
    auto& s = subs[name];
    s.app = app.add_subcommand(name, descriptions.at(name));
    s.app->add_option("--config", s.config, "key = value config file (flags win)");
    for (const auto& key : keys) s.options[key] = s.app->add_option(flag_name(key), s.values[key]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    for (auto& [name, s] : subs) {
      if (!s.app->parsed()) continue;
      ConfigMap values;
      if (!s.config.empty()) values = load_config_file(s.config);
      for (const auto& [key, opt] : s.options) {
        if (opt->count() > 0) values[key] = s.values[key];
      }
      RunConfig cfg;
      cfg.apply(values);
      if (name == "analyze") return cmd_analyze(cfg, out, err);
      if (name == "demo-model") return cmd_demo(cfg, out, err);
      if (name == "adversarial") return cmd_adversarial(cfg, out, err);
      if (name == "serve") return cmd_serve(cfg, out, err);
    }
  } catch (const Error& e) {
    err << e.to_json().dump() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    err << json{{"code", "InternalError"}, {"message", e.what()}, {"detail", json::object()}}.dump() << "\n";
    return kExitError;
  }
  return kExitError;
}

}  // namespace headscope
