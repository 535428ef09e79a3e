// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "headscope/commands.hpp"
#include "headscope/config.hpp"
#include "headscope/error.hpp"
#include "headscope/metrics.hpp"

using namespace headscope;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "headscope");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Relative path -> bytes for every regular file below `root`.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = fixtures::read_file(e.path());
  }
  return files;
}

const std::vector<std::string> kSmallModel = {"--layers", "2", "--heads", "2", "--d-model", "16", "--d-ff", "32",
                                              "--vocab", "41", "--max-len", "6"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("config text parsing") {
  const auto m = parse_config_text("# comment\n\nrelpos-threshold = 0.4\n  top_k=5  \nmode = literal\ntop_k = 2\n");
  CHECK(m.at("relpos_threshold") == "0.4");
  CHECK(m.at("top_k") == "2");
  RunConfig cfg;
  cfg.apply(m);
  CHECK(cfg.relpos_threshold == 0.4);
  CHECK(cfg.top_k == 2);
  CHECK(cfg.mode == WeightingMode::kLiteral);

  try {
    parse_config_text("a = 1\nnot a pair\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.detail()["line"] == 2);
  }
  CHECK_THROWS_AS(cfg.apply({{"no_such_key", "1"}}), ConfigError);
  CHECK_THROWS_AS(cfg.apply({{"top_k", "zero"}}), ConfigError);
  CHECK_THROWS_AS(cfg.apply({{"measure", "kl"}}), ConfigError);
}

TEST_CASE("window and head parsing") {
  CHECK(parse_window("-2,-1,+1,2") == std::vector<int>{-2, -1, 1, 2});
  CHECK(parse_window("3") == std::vector<int>{3});
  CHECK_THROWS_AS(parse_window("1,0"), ConfigError);
  CHECK_THROWS_AS(parse_window("1,x"), ConfigError);
  CHECK(parse_head("DEC_CROSS:1:4") == MatrixKey{AttentionType::DEC_CROSS, 1, 4});
  CHECK_THROWS_AS(parse_head("DEC_CROSS:1"), ConfigError);
  CHECK_THROWS_AS(parse_head("FOO:1:1"), ConfigError);
}

TEST_CASE("run config derives library configs") {
  RunConfig cfg;
  cfg.apply({{"seed", "7"}, {"layers", "3"}, {"head", "DEC_SELF:2:1"}, {"epsilon", "0.05"}, {"beam", "2"},
             {"conditioning", "independent"}, {"preserve_output", "false"}, {"window", "-1,1"}});
  CHECK(cfg.model().seed == 7);
  CHECK(cfg.model().n_layers == 3);
  const auto adv = cfg.adversarial();
  CHECK(adv.target == MatrixKey{AttentionType::DEC_SELF, 2, 1});
  CHECK(adv.epsilon == 0.05);
  CHECK(adv.beam_size == 2);
  CHECK(adv.conditioning == Conditioning::kIndependent);
  CHECK_FALSE(adv.preserve_output);
  CHECK(cfg.metrics().window == std::vector<int>{-1, 1});
}

TEST_CASE("demo-model is deterministic and uses the default geometry") {
  fixtures::TempDir dir("cli-demo");
  const auto a = cli({"demo-model", "--articles", "3", "--seed", "7", "--out", (dir / "a").string()});
  const auto b = cli({"demo-model", "--articles", "3", "--seed", "7", "--out", (dir / "b").string()});
  REQUIRE(a.code == kExitOk);
  REQUIRE(b.code == kExitOk);
  CHECK(snapshot(dir / "a") == snapshot(dir / "b"));

  const auto manifest = load_manifest(dir / "a");
  CHECK(manifest.n_layers == 4);
  CHECK(manifest.n_heads == 8);
  CHECK(manifest.articles.size() == 3);
  CHECK(manifest.decode_mode == "beam");

  const auto corpus = load_corpus(dir / "a");
  for (const auto& art : corpus.articles) {
    std::size_t entities = 0;
    for (const auto& t : art.source_tokens) entities += t.ne != NeClass::NONE ? 1 : 0;
    CHECK(static_cast<double>(entities) / static_cast<double>(art.source_tokens.size()) == 0.1);
  }
  const auto other = cli({"demo-model", "--articles", "3", "--seed", "8", "--out", (dir / "c").string()});
  REQUIRE(other.code == kExitOk);
  CHECK(snapshot(dir / "a") != snapshot(dir / "c"));
}

TEST_CASE("analyze of an empty dump warns and writes empty profiles") {
  fixtures::TempDir dir("cli-empty");
  write_dump({}, dir / "dump");
  const auto r = cli({"analyze", "--dump", (dir / "dump").string(), "--out", (dir / "out").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK(json::parse(fixtures::read_file(dir / "out/profiles.json")) == json::array());
}

TEST_CASE("analyze matches direct library calls") {
  fixtures::TempDir dir("cli-analyze");
  REQUIRE(cli(with({"demo-model", "--articles", "10", "--seed", "3", "--out", (dir / "dump").string()}, kSmallModel)).code ==
          kExitOk);
  const auto r = cli({"analyze", "--dump", (dir / "dump").string(), "--out", (dir / "out").string(), "--window=-1,1"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("ENC_SELF: 4 heads") != std::string::npos);
  CHECK(r.out.find("DEC_CROSS: 4 heads, relative position n/a") != std::string::npos);

  MetricsConfig mc;
  mc.window = {-1, 1};
  const auto profiles = profile_all(load_corpus(dir / "dump"), mc);
  CHECK(fixtures::read_file(dir / "out/profiles.json") == to_json(profiles).dump(2) + "\n");
  for (const char* name : {"enc_self_table.md", "dec_self_table.csv", "dec_cross_table.json", "relpos_enc_self.svg",
                           "relpos_dec_self.csv", "relpos_enc_self.json"}) {
    CHECK_MESSAGE(fs::exists(dir / ("out/" + std::string(name))), name);
  }
  CHECK_FALSE(fs::exists(dir / "out/relpos_dec_cross.csv"));
}

TEST_CASE("analyze reports a corrupt matrix by key") {
  fixtures::TempDir dir("cli-corrupt");
  std::mt19937_64 rng(2);
  auto a = fixtures::random_article("bad", 6, 3, 1, 2, rng);
  write_dump(std::vector{a}, dir / "dump");
  {
    std::ofstream f(dir / "dump/articles/bad/attn/DEC_SELF_0_1.f32", std::ios::binary | std::ios::trunc);
    const float v = 0.5f;
    for (int i = 0; i < 9; ++i) f.write(reinterpret_cast<const char*>(&v), 4);
  }
  const auto r = cli({"analyze", "--dump", (dir / "dump").string(), "--out", (dir / "out").string()});
  CHECK(r.code == kExitError);
  const auto err = json::parse(r.err);
  CHECK(err["code"] == "RowSumError");
  CHECK(err["detail"]["matrix"] == "DEC_SELF_0_1");
}

TEST_CASE("analyze argument errors") {
  CHECK(cli({"analyze", "--out", "x"}).code == kExitError);
  const auto missing = cli({"analyze", "--dump", "/nonexistent/dump", "--out", "x"});
  CHECK(missing.code == kExitError);
  CHECK(json::parse(missing.err)["code"] == "MissingFile");
  CHECK(cli({"analyze", "--bogus"}).code != kExitOk);
  CHECK(cli({}).code != kExitOk);
}

TEST_CASE("config file values are overridden by flags") {
  fixtures::TempDir dir("cli-config");
  {
    std::ofstream f(dir / "run.conf");
    f << "# demo settings\narticles = 2\nseed = 5\nlayers = 1\nheads = 2\nd-model = 8\nd_ff = 8\nvocab = 21\nmax_len = 4\n";
  }
  const auto r = cli({"demo-model", "--config", (dir / "run.conf").string(), "--layers", "2", "--out", (dir / "d").string()});
  REQUIRE(r.code == kExitOk);
  const auto m = load_manifest(dir / "d");
  CHECK(m.articles.size() == 2);
  CHECK(m.n_layers == 2);
  CHECK(m.n_heads == 2);

  {
    std::ofstream f(dir / "bad.conf");
    f << "nonsense_key = 1\n";
  }
  const auto bad = cli({"demo-model", "--config", (dir / "bad.conf").string(), "--out", (dir / "e").string()});
  CHECK(bad.code == kExitError);
  CHECK(json::parse(bad.err)["code"] == "ConfigError");
}

TEST_CASE("adversarial command end to end") {
  fixtures::TempDir dir("cli-adv");
  const std::vector<std::string> tiny = {"--layers", "2", "--heads", "2", "--d-model", "32", "--d-ff", "64",
                                         "--vocab", "50", "--input-len", "12"};
  const auto r = cli(with({"adversarial", "--head", "DEC_CROSS:0:0", "--epsilon", "0.01", "--beam", "4", "--budget", "60",
                           "--out", (dir / "report.json").string()},
                          tiny));
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("constraint_satisfied=true") != std::string::npos);
  const auto report = json::parse(fixtures::read_file(dir / "report.json"));
  CHECK(report["mode"] == "craft");
  CHECK(report["summary"]["output_identical"] == true);
  CHECK(report["config"]["budget"] == 60);

  const auto stdout_run = cli(with({"adversarial", "--head", "DEC_CROSS:0:0", "--budget", "5"}, tiny));
  CHECK(json::parse(stdout_run.out)["mode"] == "craft");

  const auto targeted = cli(with({"adversarial", "--head", "DEC_CROSS:1:1", "--target-tag", "NOUN", "--budget", "1"}, tiny));
  CHECK(targeted.code == kExitOk);
  CHECK(json::parse(targeted.out)["mode"] == "targeted");

  const auto enc = cli(with({"adversarial", "--head", "ENC_SELF:0:0", "--budget", "1"}, tiny));
  CHECK(enc.code == kExitError);
  CHECK(json::parse(enc.err)["code"] == "ConfigError");
}

TEST_CASE("adversarial command on a demo dump") {
  fixtures::TempDir dir("cli-adv-dump");
  REQUIRE(cli(with({"demo-model", "--articles", "2", "--seed", "4", "--out", (dir / "dump").string()}, kSmallModel)).code ==
          kExitOk);
  const auto m = load_manifest(dir / "dump");
  const auto r = cli({"adversarial", "--dump", (dir / "dump").string(), "--article", m.articles.back().id, "--head",
                      "DEC_CROSS:1:0", "--budget", "30", "--beam", "4", "--max-len", "6"});
  CHECK(r.code != kExitError);
  const auto report = json::parse(r.out);
  CHECK(report["input_tokens"].size() == m.articles.back().source_len);

  const auto missing = cli({"adversarial", "--dump", (dir / "dump").string(), "--article", "nope", "--head", "DEC_CROSS:0:0"});
  CHECK(missing.code == kExitError);
}
