// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "headscope/adversarial.hpp"
#include "headscope/metrics.hpp"

namespace headscope {

/// key -> value, keys use underscores (`relpos_threshold`).
using ConfigMap = std::map<std::string, std::string>;

/// Parses `key = value` lines. Blank lines and lines starting with '#' are
/// skipped; a repeated key keeps the last value. Throws ConfigError naming
/// the 1-based line.
ConfigMap parse_config_text(std::string_view text);
ConfigMap load_config_file(const std::filesystem::path& path);

std::vector<int> parse_window(std::string_view text);
MatrixKey parse_head(std::string_view text);

/// Every setting of every subcommand. Values come from the defaults below,
/// then the config file, then command-line flags.
struct RunConfig {
  // analyze / serve
  std::filesystem::path dump;
  std::filesystem::path out;
  WeightingMode mode = WeightingMode::kMass;
  std::vector<int> window = kDefaultWindow;
  double relpos_threshold = 0.5;
  double nep_factor = 2.0;
  std::size_t top_k = 3;
  unsigned threads = 0;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path static_dir;

  // demo-model
  std::uint64_t seed = 42;
  int layers = 4;
  int heads = 8;
  int d_model = 64;
  int d_ff = 128;
  int vocab = 101;
  std::size_t articles = 10;
  double entity_fraction = 0.1;
  int beam = 4;
  int max_len = 8;
  double length_penalty = 0.0;

  // adversarial
  std::optional<MatrixKey> head;
  double epsilon = 0.01;
  DivergenceMeasure measure = DivergenceMeasure::kJsd;
  int budget = 500;
  double step_size = 0.5;
  std::string target_tag;
  std::string article;
  std::filesystem::path weights;
  std::uint64_t model_seed = 42;
  std::size_t input_len = 12;
  Conditioning conditioning = Conditioning::kSequential;
  bool preserve_output = true;

  /// Throws ConfigError for unknown keys or unparsable values.
  void apply(const ConfigMap& values);

  MetricsConfig metrics() const;
  ModelConfig model() const;
  BeamConfig beam_config() const { return {beam, max_len, length_penalty}; }
  AdversarialConfig adversarial() const;
};

}  // namespace headscope
