// SPDX-License-Identifier: Apache-2.0
#include "headscope/corpus.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "headscope/error.hpp"
#include "headscope/numeric.hpp"

namespace headscope {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kUposCount> kUposNames = {"VERB", "NOUN", "PRON", "ADJ", "ADV", "ADP",
                                                                  "CONJ", "DET",  "NUM",  "PRT", "X",   "PUNC"};
constexpr std::array<std::string_view, 5> kNeNames = {"PER", "LOC", "ORG", "MISC", "NONE"};
constexpr std::array<std::string_view, 3> kTypeNames = {"ENC_SELF", "DEC_SELF", "DEC_CROSS"};

std::optional<int> parse_index(std::string_view s) {
  if (s.empty() || (s.size() > 1 && s[0] == '0')) return std::nullopt;
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || value < 0) return std::nullopt;
  return value;
}

bool safe_article_id(std::string_view id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::none_of(id.begin(), id.end(), [](char c) {
    return c == '/' || c == '\\' || c == '\0' || c == '\n' || c == '\r' || c == '\t';
  });
}

fs::path article_dir(const fs::path& root, std::string_view id) { return root / "articles" / std::string(id); }

fs::path matrix_path(const fs::path& root, std::string_view id, const MatrixKey& key) {
  return article_dir(root, id) / "attn" / (key_name(key) + ".f32");
}

std::pair<std::size_t, std::size_t> dims_for(AttentionType type, std::size_t source_len, std::size_t summary_len) {
  switch (type) {
    case AttentionType::ENC_SELF:
      return {source_len, source_len};
    case AttentionType::DEC_SELF:
      return {summary_len, summary_len};
    case AttentionType::DEC_CROSS:
      return {summary_len, source_len};
  }
  return {0, 0};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open " + path.string(), {{"path", path.string()}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string(), {{"path", path.string()}});
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string(), {{"path", path.string()}});
}

std::string encode_f32_le(std::span<const double> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return bytes;
}

std::vector<double> decode_f32_le(std::string_view bytes) {
  std::vector<double> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return values;
}

int require_positive_int(const json& j, const char* field, int fallback, bool required) {
  if (!j.contains(field)) {
    if (required) throw SchemaError(std::string("manifest is missing '") + field + "'", {{"field", field}});
    return fallback;
  }
  const auto& v = j.at(field);
  if (!v.is_number_integer()) throw SchemaError(std::string("'") + field + "' must be an integer", {{"field", field}});
  const auto value = v.get<long long>();
  if (value <= 0) {
    throw DimensionError(std::string("'") + field + "' must be positive", {{"field", field}, {"value", value}});
  }
  return static_cast<int>(value);
}

void validate_token_text(const Token& t, std::size_t index) {
  if (t.text.empty()) throw SchemaError("empty token text", {{"index", index}});
  if (t.text.find_first_of("\t\n\r") != std::string::npos) {
    throw SchemaError("token text contains a tab or line break", {{"index", index}, {"token", t.text}});
  }
}

}  // namespace

std::string_view to_string(UposTag tag) noexcept { return kUposNames[static_cast<std::size_t>(tag)]; }
std::string_view to_string(NeClass ne) noexcept { return kNeNames[static_cast<std::size_t>(ne)]; }
std::string_view to_string(AttentionType type) noexcept { return kTypeNames[static_cast<std::size_t>(type)]; }

std::optional<UposTag> parse_upos(std::string_view s) noexcept {
  if (s == ".") return UposTag::PUNC;
  for (std::size_t i = 0; i < kUposNames.size(); ++i) {
    if (kUposNames[i] == s) return static_cast<UposTag>(i);
  }
  return std::nullopt;
}

std::optional<NeClass> parse_ne(std::string_view s) noexcept {
  if (s == "O") return NeClass::NONE;
  if (s.size() > 2 && s[1] == '-' && std::string_view("BIESLU").find(s[0]) != std::string_view::npos) {
    s.remove_prefix(2);
  }
  for (std::size_t i = 0; i < kNeNames.size(); ++i) {
    if (kNeNames[i] == s) return static_cast<NeClass>(i);
  }
  return std::nullopt;
}

std::optional<AttentionType> parse_attention_type(std::string_view s) noexcept {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (kTypeNames[i] == s) return static_cast<AttentionType>(i);
  }
  return std::nullopt;
}

std::string key_name(const MatrixKey& key) {
  return std::string(to_string(key.type)) + "_" + std::to_string(key.layer) + "_" + std::to_string(key.head);
}

std::optional<MatrixKey> parse_key_name(std::string_view stem) noexcept {
  const auto last = stem.rfind('_');
  if (last == std::string_view::npos || last == 0) return std::nullopt;
  const auto mid = stem.rfind('_', last - 1);
  if (mid == std::string_view::npos) return std::nullopt;
  auto type = parse_attention_type(stem.substr(0, mid));
  auto layer = parse_index(stem.substr(mid + 1, last - mid - 1));
  auto head = parse_index(stem.substr(last + 1));
  if (!type || !layer || !head) return std::nullopt;
  return MatrixKey{*type, *layer, *head};
}

void validate_row_stochastic(const AttentionMatrix& m, double tolerance) {
  if (m.weights.size() != m.rows * m.cols) {
    throw DimensionError("matrix " + key_name(m.key) + " has inconsistent storage",
                         {{"matrix", key_name(m.key)}, {"rows", m.rows}, {"cols", m.cols}});
  }
  for (std::size_t r = 0; r < m.rows; ++r) {
    CompensatedSum sum;
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double w = m.at(r, c);
      if (!std::isfinite(w) || w < 0.0 || w > 1.0) {
        throw RowSumError("matrix " + key_name(m.key) + " row " + std::to_string(r) + " has an entry outside [0, 1]",
                          {{"matrix", key_name(m.key)},
                           {"type", to_string(m.key.type)},
                           {"layer", m.key.layer},
                           {"head", m.key.head},
                           {"row", r},
                           {"col", c}});
      }
      sum.add(w);
    }
    if (std::fabs(sum.value() - 1.0) > tolerance) {
      throw RowSumError("matrix " + key_name(m.key) + " row " + std::to_string(r) + " sums to " +
                            shortest_repr(sum.value()),
                        {{"matrix", key_name(m.key)},
                         {"type", to_string(m.key.type)},
                         {"layer", m.key.layer},
                         {"head", m.key.head},
                         {"row", r},
                         {"sum", sum.value()}});
    }
  }
}

std::span<const Token> AnnotatedArticle::key_tokens(AttentionType type) const {
  if (type == AttentionType::DEC_SELF) return summary_tokens;
  return source_tokens;
}

std::pair<std::size_t, std::size_t> AnnotatedArticle::expected_dims(AttentionType type) const {
  return dims_for(type, source_tokens.size(), summary_tokens.size());
}

const ArticleEntry* DumpManifest::find(std::string_view id) const noexcept {
  for (const auto& a : articles) {
    if (a.id == id) return &a;
  }
  return nullptr;
}

std::vector<MatrixKey> DumpManifest::keys() const {
  std::vector<MatrixKey> out;
  for (auto type : attention_types) {
    for (int l = 0; l < n_layers; ++l) {
      for (int h = 0; h < n_heads; ++h) out.push_back({type, l, h});
    }
  }
  return out;
}

json DumpManifest::to_json() const {
  json types = json::array();
  for (auto t : attention_types) types.push_back(to_string(t));
  json arts = json::array();
  for (const auto& a : articles) {
    arts.push_back({{"id", a.id}, {"source_len", a.source_len}, {"summary_len", a.summary_len}});
  }
  json j = {{"format", "headscope-dump"},
            {"version", 1},
            {"n_layers", n_layers},
            {"n_heads", n_heads},
            {"attention_types", types},
            {"dtype", dtype},
            {"endianness", endianness},
            {"max_source_tokens", max_source_tokens},
            {"articles", arts}};
  if (decode_mode) j["decode_mode"] = *decode_mode;
  return j;
}

DumpManifest load_manifest(const fs::path& path) {
  fs::path file = path;
  if (fs::is_directory(path)) file = path / "manifest.json";
  if (!fs::exists(file)) throw MissingFile("manifest not found: " + file.string(), {{"path", file.string()}});

  json j;
  try {
    j = json::parse(read_file(file));
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("malformed manifest: ") + e.what(), {{"path", file.string()}});
  }
  if (!j.is_object()) throw SchemaError("manifest must be a JSON object", {{"path", file.string()}});

  DumpManifest m;
  m.root = file.parent_path();
  m.n_layers = require_positive_int(j, "n_layers", 4, false);
  m.n_heads = require_positive_int(j, "n_heads", 8, false);
  m.max_source_tokens = static_cast<std::size_t>(require_positive_int(j, "max_source_tokens", 400, false));

  if (j.contains("dtype")) {
    if (!j["dtype"].is_string() || j["dtype"] != "float32") throw SchemaError("unsupported dtype; expected float32");
  }
  if (j.contains("endianness")) {
    if (!j["endianness"].is_string() || j["endianness"] != "little") {
      throw SchemaError("unsupported endianness; expected little");
    }
  }
  if (j.contains("decode_mode")) {
    if (!j["decode_mode"].is_string()) throw SchemaError("'decode_mode' must be a string");
    m.decode_mode = j["decode_mode"].get<std::string>();
  }
  if (j.contains("attention_types")) {
    if (!j["attention_types"].is_array()) throw SchemaError("'attention_types' must be an array");
    m.attention_types.clear();
    for (const auto& t : j["attention_types"]) {
      auto parsed = t.is_string() ? parse_attention_type(t.get<std::string>()) : std::nullopt;
      if (!parsed) throw SchemaError("unknown attention type in manifest", {{"value", t}});
      if (std::find(m.attention_types.begin(), m.attention_types.end(), *parsed) != m.attention_types.end()) {
        throw SchemaError("duplicate attention type in manifest", {{"value", t}});
      }
      m.attention_types.push_back(*parsed);
    }
    std::sort(m.attention_types.begin(), m.attention_types.end());
  }

  if (!j.contains("articles") || !j["articles"].is_array()) throw SchemaError("manifest needs an 'articles' array");
  std::set<std::string> seen;
  for (const auto& a : j["articles"]) {
    if (!a.is_object() || !a.contains("id") || !a["id"].is_string()) {
      throw SchemaError("article entry needs a string 'id'", {{"entry", a}});
    }
    ArticleEntry e;
    e.id = a["id"].get<std::string>();
    if (!safe_article_id(e.id)) throw SchemaError("article id is not a valid path component", {{"id", e.id}});
    if (!seen.insert(e.id).second) throw SchemaError("duplicate article id", {{"id", e.id}});
    e.source_len = static_cast<std::size_t>(require_positive_int(a, "source_len", 0, true));
    e.summary_len = static_cast<std::size_t>(require_positive_int(a, "summary_len", 0, true));
    if (e.source_len > m.max_source_tokens) {
      throw DimensionError("article exceeds the source truncation limit",
                           {{"id", e.id}, {"source_len", e.source_len}, {"limit", m.max_source_tokens}});
    }
    m.articles.push_back(std::move(e));
  }

  for (const auto& a : m.articles) {
    const auto tokens = article_dir(m.root, a.id) / "tokens.tsv";
    if (!fs::exists(tokens)) throw MissingFile("missing annotation file " + tokens.string(), {{"path", tokens.string()}, {"id", a.id}});
    for (const auto& key : m.keys()) {
      const auto p = matrix_path(m.root, a.id, key);
      if (!fs::exists(p)) {
        throw MissingFile("missing matrix file " + p.string(),
                          {{"path", p.string()}, {"id", a.id}, {"matrix", key_name(key)}});
      }
      const auto [rows, cols] = dims_for(key.type, a.source_len, a.summary_len);
      const auto expected = rows * cols * 4;
      const auto actual = fs::file_size(p);
      if (actual != expected) {
        throw DimensionError("matrix file " + p.string() + " has " + std::to_string(actual) + " bytes, expected " +
                                 std::to_string(expected),
                             {{"path", p.string()},
                              {"id", a.id},
                              {"matrix", key_name(key)},
                              {"bytes", actual},
                              {"expected_bytes", expected}});
      }
    }
  }
  return m;
}

std::pair<std::vector<Token>, std::vector<Token>> parse_tokens_tsv(std::string_view text) {
  std::vector<Token> source, summary;
  bool in_summary = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line == "## SUMMARY") {
      if (in_summary) throw TagError("second '## SUMMARY' sentinel at line " + std::to_string(line_no), {{"line", line_no}});
      in_summary = true;
      continue;
    }
    if (line[0] == '#' && line.find('\t') == std::string_view::npos) continue;

    if (std::count(line.begin(), line.end(), '\t') != 2) {
      throw TagError("line " + std::to_string(line_no) + ": expected 3 tab-separated columns (token, POS, NE)",
                     {{"line", line_no}});
    }
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    const std::array<std::string_view, 3> cols = {line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
                                                  line.substr(t2 + 1)};
    if (cols[0].empty()) throw TagError("line " + std::to_string(line_no) + ": empty token", {{"line", line_no}});
    auto upos = parse_upos(cols[1]);
    if (!upos) {
      throw TagError("line " + std::to_string(line_no) + ": unknown POS tag '" + std::string(cols[1]) + "'",
                     {{"line", line_no}, {"value", std::string(cols[1])}});
    }
    auto ne = parse_ne(cols[2]);
    if (!ne) {
      throw TagError("line " + std::to_string(line_no) + ": unknown NE tag '" + std::string(cols[2]) + "'",
                     {{"line", line_no}, {"value", std::string(cols[2])}});
    }
    (in_summary ? summary : source).push_back(Token{std::string(cols[0]), *upos, *ne});
  }
  return {std::move(source), std::move(summary)};
}

std::string format_tokens_tsv(std::span<const Token> source, std::span<const Token> summary) {
  std::string out = "# token POS NE\n";
  auto emit = [&out](const Token& t) {
    out += t.text;
    out += '\t';
    out += to_string(t.pos);
    out += '\t';
    out += to_string(t.ne);
    out += '\n';
  };
  for (const auto& t : source) emit(t);
  out += "## SUMMARY\n";
  for (const auto& t : summary) emit(t);
  return out;
}

AnnotatedArticle load_article(const DumpManifest& manifest, std::string_view article_id) {
  const ArticleEntry* entry = manifest.find(article_id);
  if (!entry) throw SchemaError("article not listed in manifest", {{"id", std::string(article_id)}});

  AnnotatedArticle article;
  article.article_id = entry->id;
  const auto dir = article_dir(manifest.root, entry->id);
  try {
    std::tie(article.source_tokens, article.summary_tokens) = parse_tokens_tsv(read_file(dir / "tokens.tsv"));
  } catch (TagError& e) {
    auto detail = e.detail();
    detail["id"] = entry->id;
    throw TagError(std::string(e.what()) + " in " + (dir / "tokens.tsv").string(), detail);
  }
  if (article.source_tokens.size() != entry->source_len || article.summary_tokens.size() != entry->summary_len) {
    throw LengthMismatch("token counts of article " + entry->id + " do not match the manifest dims",
                         {{"id", entry->id},
                          {"source_tokens", article.source_tokens.size()},
                          {"summary_tokens", article.summary_tokens.size()},
                          {"source_len", entry->source_len},
                          {"summary_len", entry->summary_len}});
  }

  for (const auto& key : manifest.keys()) {
    const auto p = matrix_path(manifest.root, entry->id, key);
    const auto bytes = read_file(p);
    AttentionMatrix m;
    m.key = key;
    std::tie(m.rows, m.cols) = article.expected_dims(key.type);
    if (bytes.size() != m.rows * m.cols * 4) {
      throw DimensionError("matrix file " + p.string() + " has the wrong byte length",
                           {{"path", p.string()}, {"id", entry->id}, {"matrix", key_name(key)}});
    }
    m.weights = decode_f32_le(bytes);
    try {
      validate_row_stochastic(m, kLoadRowSumTolerance);
    } catch (RowSumError& e) {
      auto detail = e.detail();
      detail["id"] = entry->id;
      throw RowSumError(std::string(e.what()) + " in article " + entry->id, detail);
    }
    article.matrices.emplace(key, std::move(m));
  }
  return article;
}

DumpManifest write_dump(std::span<const AnnotatedArticle> articles, const fs::path& path, const WriteOptions& options) {
  DumpManifest m;
  m.root = path;
  m.decode_mode = options.decode_mode;
  m.max_source_tokens = options.max_source_tokens;

  if (articles.empty()) {
    m.n_layers = options.n_layers;
    m.n_heads = options.n_heads;
  } else {
    std::set<AttentionType> types;
    int max_layer = -1, max_head = -1;
    for (const auto& a : articles) {
      for (const auto& [key, mat] : a.matrices) {
        types.insert(key.type);
        max_layer = std::max(max_layer, key.layer);
        max_head = std::max(max_head, key.head);
      }
    }
    if (types.empty()) throw SchemaError("articles carry no attention matrices");
    m.attention_types.assign(types.begin(), types.end());
    m.n_layers = max_layer + 1;
    m.n_heads = max_head + 1;
  }

  std::set<std::string> seen;
  for (const auto& a : articles) {
    if (!safe_article_id(a.article_id)) throw SchemaError("article id is not a valid path component", {{"id", a.article_id}});
    if (!seen.insert(a.article_id).second) throw SchemaError("duplicate article id", {{"id", a.article_id}});
    if (a.source_tokens.empty() || a.summary_tokens.empty()) {
      throw DimensionError("article needs at least one source and one summary token", {{"id", a.article_id}});
    }
    if (a.source_tokens.size() > m.max_source_tokens) {
      throw DimensionError("article exceeds the source truncation limit",
                           {{"id", a.article_id}, {"source_len", a.source_tokens.size()}, {"limit", m.max_source_tokens}});
    }
    for (std::size_t i = 0; i < a.source_tokens.size(); ++i) validate_token_text(a.source_tokens[i], i);
    for (std::size_t i = 0; i < a.summary_tokens.size(); ++i) validate_token_text(a.summary_tokens[i], i);
    if (a.matrices.size() != m.keys().size()) {
      throw SchemaError("article does not carry the full (type, layer, head) grid", {{"id", a.article_id}});
    }
    for (const auto& key : m.keys()) {
      auto it = a.matrices.find(key);
      if (it == a.matrices.end()) {
        throw SchemaError("article is missing matrix " + key_name(key), {{"id", a.article_id}, {"matrix", key_name(key)}});
      }
      const auto& mat = it->second;
      if (mat.key != key) throw SchemaError("matrix key does not match its slot", {{"id", a.article_id}, {"matrix", key_name(key)}});
      if (std::pair{mat.rows, mat.cols} != a.expected_dims(key.type)) {
        throw LengthMismatch("matrix " + key_name(key) + " dims do not match the token counts",
                             {{"id", a.article_id}, {"matrix", key_name(key)}, {"rows", mat.rows}, {"cols", mat.cols}});
      }
      validate_row_stochastic(mat, kLoadRowSumTolerance);
    }
    m.articles.push_back({a.article_id, a.source_tokens.size(), a.summary_tokens.size()});
  }

  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create " + path.string() + ": " + ec.message(), {{"path", path.string()}});
  for (const auto& a : articles) {
    const auto dir = article_dir(path, a.article_id);
    fs::create_directories(dir / "attn", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message(), {{"path", dir.string()}});
    write_file(dir / "tokens.tsv", format_tokens_tsv(a.source_tokens, a.summary_tokens));
    for (const auto& [key, mat] : a.matrices) write_file(matrix_path(path, a.article_id, key), encode_f32_le(mat.weights));
  }
  write_file(path / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

const AnnotatedArticle* Corpus::find(std::string_view id) const noexcept {
  for (const auto& a : articles) {
    if (a.article_id == id) return &a;
  }
  return nullptr;
}

Corpus load_corpus(const fs::path& path, unsigned threads) {
  Corpus corpus;
  corpus.manifest = load_manifest(path);
  corpus.articles.resize(corpus.manifest.articles.size());
  parallel_for(corpus.articles.size(), threads, [&](std::size_t i) {
    corpus.articles[i] = load_article(corpus.manifest, corpus.manifest.articles[i].id);
  });
  return corpus;
}

}  // namespace headscope
