// SPDX-License-Identifier: Apache-2.0
#include "headscope/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "headscope/error.hpp"

namespace headscope {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError("invalid value for " + key + ": " + why, {{"key", key}, {"value", value}});
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end || value.empty()) bad_value(key, value, "not a number");
  return out;
}

int parse_positive(const std::string& key, const std::string& value) {
  const int v = parse_number<int>(key, value);
  if (v < 1) bad_value(key, value, "must be >= 1");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "expected true or false");
}

}  // namespace

ConfigMap parse_config_text(std::string_view text) {
  ConfigMap out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not key = value", {{"line", line_no}});
    }
    auto key = std::string(trim(line.substr(0, eq)));
    for (char& c : key) c = c == '-' ? '_' : c;
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + " has an empty key", {{"line", line_no}});
    out[key] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

ConfigMap load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile("cannot read config file " + path.string(), {{"path", path.string()}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::vector<int> parse_window(std::string_view text) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto item = std::string(trim(text.substr(pos, end - pos)));
    pos = end + 1;
    const int v = parse_number<int>("window", item.starts_with('+') ? item.substr(1) : item);
    if (v == 0) bad_value("window", std::string(text), "offset 0 is the self position");
    out.push_back(v);
  }
  if (out.empty()) bad_value("window", std::string(text), "empty window");
  return out;
}

MatrixKey parse_head(std::string_view text) {
  const auto a = text.find(':');
  const auto b = a == std::string_view::npos ? a : text.find(':', a + 1);
  if (b == std::string_view::npos) bad_value("head", std::string(text), "expected TYPE:layer:head");
  const auto type = parse_attention_type(text.substr(0, a));
  if (!type) bad_value("head", std::string(text), "unknown attention type");
  MatrixKey key;
  key.type = *type;
  key.layer = parse_number<int>("head", std::string(text.substr(a + 1, b - a - 1)));
  key.head = parse_number<int>("head", std::string(text.substr(b + 1)));
  if (key.layer < 0 || key.head < 0) bad_value("head", std::string(text), "negative index");
  return key;
}

void RunConfig::apply(const ConfigMap& values) {
  for (const auto& [key, value] : values) {
    if (key == "dump") dump = value;
    else if (key == "out") out = value;
    else if (key == "mode") {
      if (value == "mass" || value == "MASS") mode = WeightingMode::kMass;
      else if (value == "literal" || value == "LITERAL") mode = WeightingMode::kLiteral;
      else bad_value(key, value, "expected mass or literal");
    }
    else if (key == "window") window = parse_window(value);
    else if (key == "relpos_threshold") relpos_threshold = parse_number<double>(key, value);
    else if (key == "nep_factor") nep_factor = parse_number<double>(key, value);
    else if (key == "top_k") top_k = static_cast<std::size_t>(parse_positive(key, value));
    else if (key == "threads") threads = parse_number<unsigned>(key, value);
    else if (key == "host") host = value;
    else if (key == "port") {
      port = parse_number<int>(key, value);
      if (port < 0 || port > 65535) bad_value(key, value, "port out of range");
    }
    else if (key == "static") static_dir = value;
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
    else if (key == "layers") layers = parse_positive(key, value);
    else if (key == "heads") heads = parse_positive(key, value);
    else if (key == "d_model") d_model = parse_positive(key, value);
    else if (key == "d_ff") d_ff = parse_positive(key, value);
    else if (key == "vocab") vocab = parse_positive(key, value);
    else if (key == "articles") articles = parse_number<std::size_t>(key, value);
    else if (key == "entity_fraction") entity_fraction = parse_number<double>(key, value);
    else if (key == "beam") beam = parse_positive(key, value);
    else if (key == "max_len") max_len = parse_positive(key, value);
    else if (key == "length_penalty") length_penalty = parse_number<double>(key, value);
    else if (key == "head") head = parse_head(value);
    else if (key == "epsilon") epsilon = parse_number<double>(key, value);
    else if (key == "measure") {
      const auto m = parse_measure(value);
      if (!m) bad_value(key, value, "expected jsd or tvd");
      measure = *m;
    }
    else if (key == "budget") budget = parse_positive(key, value);
    else if (key == "step_size") step_size = parse_number<double>(key, value);
    else if (key == "target_tag") target_tag = value;
    else if (key == "article") article = value;
    else if (key == "weights") weights = value;
    else if (key == "model_seed") model_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "input_len") input_len = static_cast<std::size_t>(parse_positive(key, value));
    else if (key == "conditioning") {
      if (value == "sequential") conditioning = Conditioning::kSequential;
      else if (value == "independent") conditioning = Conditioning::kIndependent;
      else bad_value(key, value, "expected sequential or independent");
    }
    else if (key == "preserve_output") preserve_output = parse_bool(key, value);
    else throw ConfigError("unknown config key " + key, {{"key", key}});
  }
}

MetricsConfig RunConfig::metrics() const {
  MetricsConfig m;
  m.window = window;
  m.mode = mode;
  m.relpos_threshold = relpos_threshold;
  m.nep_factor = nep_factor;
  m.threads = threads;
  return m;
}

ModelConfig RunConfig::model() const {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = d_model;
  c.d_ff = d_ff;
  c.vocab_size = vocab;
  c.seed = seed;
  c.validate();
  return c;
}

AdversarialConfig RunConfig::adversarial() const {
  if (!head) throw ConfigError("adversarial runs need --head TYPE:layer:head");
  AdversarialConfig a;
  a.target = *head;
  a.epsilon = epsilon;
  a.beam_size = beam;
  a.max_len = max_len;
  a.length_penalty = length_penalty;
  a.measure = measure;
  a.budget = budget;
  a.step_size = step_size;
  a.seed = seed;
  a.conditioning = conditioning;
  a.preserve_output = preserve_output;
  a.threads = threads == 0 ? 1 : threads;
  return a;
}

}  // namespace headscope
