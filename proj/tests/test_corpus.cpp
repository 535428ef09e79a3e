// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>

#include "fixtures.hpp"
#include "headscope/corpus.hpp"
#include "headscope/error.hpp"

using namespace headscope;
using fixtures::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// One article with a 3 × 5 DEC_CROSS matrix only.
AnnotatedArticle cross_only_article() {
  AnnotatedArticle a;
  a.article_id = "A1";
  for (int i = 0; i < 5; ++i) a.source_tokens.push_back(fixtures::tok("s" + std::to_string(i), UposTag::NOUN));
  for (int i = 0; i < 3; ++i) a.summary_tokens.push_back(fixtures::tok("t" + std::to_string(i), UposTag::VERB));
  const MatrixKey key{AttentionType::DEC_CROSS, 0, 0};
  a.matrices[key] = fixtures::uniform_matrix(key, 3, 5);
  return a;
}

template <class E, class F>
nlohmann::json error_detail(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.detail();
  }
  FAIL("expected exception was not thrown");
  return {};
}

}  // namespace

TEST_CASE("tag names parse and print") {
  for (auto t : kAllUpos) CHECK(parse_upos(to_string(t)) == t);
  CHECK(parse_upos(".") == UposTag::PUNC);
  CHECK_FALSE(parse_upos("LOC").has_value());
  CHECK(parse_ne("B-PER") == NeClass::PER);
  CHECK(parse_ne("I-LOC") == NeClass::LOC);
  CHECK(parse_ne("O") == NeClass::NONE);
  CHECK_FALSE(parse_ne("NOUN").has_value());
  CHECK(parse_attention_type("DEC_CROSS") == AttentionType::DEC_CROSS);
  CHECK(key_name({AttentionType::DEC_SELF, 2, 7}) == "DEC_SELF_2_7");
  CHECK(parse_key_name("ENC_SELF_3_1") == MatrixKey{AttentionType::ENC_SELF, 3, 1});
  CHECK_FALSE(parse_key_name("ENC_SELF_3").has_value());
}

TEST_CASE("manifest with no articles is valid") {
  TempDir dir("corpus-empty");
  const auto m = write_dump({}, dir.path());
  CHECK(m.articles.empty());
  const auto loaded = load_manifest(dir.path());
  CHECK(loaded.articles.empty());
  const auto corpus = load_corpus(dir.path());
  CHECK(corpus.articles.empty());
}

TEST_CASE("default geometry manifest with two articles loads") {
  TempDir dir("corpus-geom");
  std::mt19937_64 rng(3);
  std::vector<AnnotatedArticle> articles = {fixtures::random_article("a", 10, 4, 4, 8, rng),
                                            fixtures::random_article("b", 20, 5, 4, 8, rng)};
  write_dump(articles, dir.path());
  const auto m = load_manifest(dir.path() / "manifest.json");
  CHECK(m.n_layers == 4);
  CHECK(m.n_heads == 8);
  REQUIRE(m.articles.size() == 2);
  CHECK(m.articles[1].source_len == 20);
  CHECK(m.keys().size() == 96);
}

TEST_CASE("matrix file with the wrong byte length is a DimensionError") {
  TempDir dir("corpus-bytes");
  write_dump(std::vector{cross_only_article()}, dir.path());
  write_text(dir / "articles/A1/attn/DEC_CROSS_0_0.f32", std::string(4 * 14, '\0'));
  const auto detail = error_detail<DimensionError>([&] { load_manifest(dir.path()); });
  CHECK(detail["matrix"] == "DEC_CROSS_0_0");
  CHECK(detail["bytes"] == 56);
  CHECK(detail["expected_bytes"] == 60);
}

TEST_CASE("missing matrix file is a MissingFile error") {
  TempDir dir("corpus-missing");
  write_dump(std::vector{cross_only_article()}, dir.path());
  std::filesystem::remove(dir / "articles/A1/attn/DEC_CROSS_0_0.f32");
  CHECK_THROWS_AS(load_manifest(dir.path()), MissingFile);
  CHECK_THROWS_AS(load_manifest(dir / "nope"), MissingFile);
}

TEST_CASE("3 x 5 DEC_CROSS article loads") {
  TempDir dir("corpus-cross");
  write_dump(std::vector{cross_only_article()}, dir.path());
  const auto m = load_manifest(dir.path());
  const auto a = load_article(m, "A1");
  CHECK(a.source_tokens.size() == 5);
  CHECK(a.summary_tokens.size() == 3);
  const auto& mat = a.matrices.at({AttentionType::DEC_CROSS, 0, 0});
  CHECK(mat.rows == 3);
  CHECK(mat.cols == 5);
  CHECK(mat.at(2, 4) == doctest::Approx(0.2).epsilon(1e-7));
}

TEST_CASE("annotation columns in the wrong order are a TagError with the line") {
  const auto detail = error_detail<TagError>([] { parse_tokens_tsv("The\tDET\tO\nSydney\tLOC\tNOUN\n"); });
  CHECK(detail["line"] == 2);

  TempDir dir("corpus-tags");
  write_dump(std::vector{cross_only_article()}, dir.path());
  write_text(dir / "articles/A1/tokens.tsv", "s0\tNOUN\tO\ns1\tNOUN\tO\nSydney\tLOC\tNOUN\n");
  const auto m = load_manifest(dir.path());
  const auto d2 = error_detail<TagError>([&] { load_article(m, "A1"); });
  CHECK(d2["line"] == 3);
  CHECK(d2["id"] == "A1");
}

TEST_CASE("tokens tsv round-trips and tolerates comments") {
  const std::vector<Token> src = {fixtures::tok("John", UposTag::NOUN, NeClass::PER), fixtures::tok(".", UposTag::PUNC)};
  const std::vector<Token> sum = {fixtures::tok("he", UposTag::PRON)};
  const auto text = format_tokens_tsv(src, sum);
  const auto [s, t] = parse_tokens_tsv(text);
  CHECK(s == src);
  CHECK(t == sum);
  CHECK_THROWS_AS(parse_tokens_tsv("a\tNOUN\n"), TagError);
  CHECK_THROWS_AS(parse_tokens_tsv("## SUMMARY\n## SUMMARY\n"), TagError);
}

TEST_CASE("a row summing to 0.90 is a RowSumError naming the matrix and row") {
  TempDir dir("corpus-rowsum");
  auto a = cross_only_article();
  write_dump(std::vector{a}, dir.path());
  std::vector<double> w = a.matrices.begin()->second.weights;
  w[5] = 0.1;  // row 1: 0.1 + 4 × 0.2 = 0.9
  std::string bytes;
  for (double v : w) {
    const float f = static_cast<float>(v);
    bytes.append(reinterpret_cast<const char*>(&f), 4);
  }
  write_text(dir / "articles/A1/attn/DEC_CROSS_0_0.f32", bytes);
  const auto m = load_manifest(dir.path());
  const auto detail = error_detail<RowSumError>([&] { load_article(m, "A1"); });
  CHECK(detail["type"] == "DEC_CROSS");
  CHECK(detail["layer"] == 0);
  CHECK(detail["head"] == 0);
  CHECK(detail["row"] == 1);
}

TEST_CASE("write then read reproduces the article") {
  TempDir dir("corpus-rt");
  std::mt19937_64 rng(11);
  const auto a = fixtures::random_article("x1", 12, 5, 2, 3, rng);
  const auto corpus = fixtures::round_trip({a}, dir.path());
  REQUIRE(corpus.articles.size() == 1);
  const auto& b = corpus.articles.front();
  CHECK(b.article_id == a.article_id);
  CHECK(b.source_tokens == a.source_tokens);
  CHECK(b.summary_tokens == a.summary_tokens);
  REQUIRE(b.matrices.size() == a.matrices.size());
  for (const auto& [key, m] : a.matrices) {
    const auto& n = b.matrices.at(key);
    CHECK(n.rows == m.rows);
    CHECK(n.cols == m.cols);
    for (std::size_t i = 0; i < m.weights.size(); ++i) {
      CHECK(n.weights[i] == static_cast<double>(static_cast<float>(m.weights[i])));
    }
  }
}

TEST_CASE("a non-stochastic article is refused before anything is written") {
  TempDir dir("corpus-refuse");
  auto a = cross_only_article();
  auto& w = a.matrices.begin()->second.weights;
  for (std::size_t c = 0; c < 5; ++c) w[c] = 0.4;  // row 0 sums to 2.0
  const auto target = dir / "out";
  CHECK_THROWS_AS(write_dump(std::vector{a}, target), RowSumError);
  CHECK_FALSE(std::filesystem::exists(target));
}

TEST_CASE("write_dump rejects bad ids, dims and incomplete grids") {
  TempDir dir("corpus-bad");
  auto a = cross_only_article();
  a.article_id = "../up";
  CHECK_THROWS_AS(write_dump(std::vector{a}, dir / "o1"), SchemaError);

  auto b = cross_only_article();
  b.summary_tokens.pop_back();
  CHECK_THROWS_AS(write_dump(std::vector{b}, dir / "o2"), LengthMismatch);

  std::mt19937_64 rng(5);
  auto c = fixtures::random_article("c", 6, 3, 1, 2, rng);
  c.matrices.erase({AttentionType::DEC_SELF, 0, 1});
  CHECK_THROWS_AS(write_dump(std::vector{c}, dir / "o3"), SchemaError);
}

TEST_CASE("token counts disagreeing with the manifest are a LengthMismatch") {
  TempDir dir("corpus-len");
  write_dump(std::vector{cross_only_article()}, dir.path());
  write_text(dir / "articles/A1/tokens.tsv", "s0\tNOUN\tO\n## SUMMARY\nt0\tVERB\tO\n");
  const auto m = load_manifest(dir.path());
  CHECK_THROWS_AS(load_article(m, "A1"), LengthMismatch);
}

TEST_CASE("articles keep manifest order after a parallel load") {
  TempDir dir("corpus-order");
  std::mt19937_64 rng(8);
  std::vector<AnnotatedArticle> articles;
  for (int i = 0; i < 6; ++i) articles.push_back(fixtures::random_article("z" + std::to_string(5 - i), 8, 3, 1, 1, rng));
  write_dump(articles, dir.path());
  const auto corpus = load_corpus(dir.path(), 4);
  REQUIRE(corpus.articles.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(corpus.articles[static_cast<std::size_t>(i)].article_id == articles[static_cast<std::size_t>(i)].article_id);
  CHECK(corpus.find("z0") != nullptr);
  CHECK(corpus.find("nope") == nullptr);
}
