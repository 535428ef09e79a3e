// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "fixtures.hpp"
#include "headscope/error.hpp"
#include "headscope/numeric.hpp"
#include "headscope/report.hpp"

using namespace headscope;

namespace {

const std::filesystem::path kGolden = HEADSCOPE_GOLDEN_DIR;

// Set HEADSCOPE_UPDATE_GOLDENS=1 to rewrite the files instead of comparing.
void check_golden(const std::string& name, const std::string& actual) {
  const auto path = kGolden / name;
  if (std::getenv("HEADSCOPE_UPDATE_GOLDENS")) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << actual;
    return;
  }
  REQUIRE_MESSAGE(std::filesystem::exists(path), "missing golden " << path.string());
  CHECK_MESSAGE(fixtures::read_file(path) == actual, "golden mismatch: " << name);
}

std::vector<HeadProfile> relpos_fixture() {
  auto rows = fixtures::report_fixture();
  const std::vector<std::map<int, double>> windows = {
      {{-2, 0.0}, {-1, 0.12}, {1, 0.81}, {2, 0.02}}, {{-2, 0.05}, {-1, 0.1}, {1, 0.1}, {2, 0.05}},
      {{-2, 0.0}, {-1, 0.0}, {1, 0.0}, {2, 0.0}},    {{-2, 0.31}, {-1, 0.45}, {1, 0.05}, {2, 0.0}},
      {{-2, 0.0}, {-1, 1.0}, {1, 0.0}, {2, 0.0}},    {{-2, 0.125}, {-1, 0.25}, {1, 0.5}, {2, 0.0}},
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].key.type = AttentionType::ENC_SELF;
    RelPosProfile rp;
    rp.window = windows[i];
    double sum = 0.0;
    for (const auto& [o, r] : rp.window) sum += r;
    rp.self_ratio = i == 2 ? 1.0 : 0.0;
    rp.other_ratio = 1.0 - sum - rp.self_ratio;
    rows[i].relpos = rp;
  }
  return rows;
}

// Hand-sorted expectations for the report fixture, as (layer, head) pairs.
using Cell = std::pair<int, int>;
std::vector<Cell> marked(std::span<const HeadProfile> rows, const std::vector<bool>& column) {
  std::vector<Cell> out;
  for (std::size_t r = 0; r < rows.size(); ++r)
    if (column[r]) out.emplace_back(rows[r].key.layer, rows[r].key.head);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("fixed-point formatting rounds half up") {
  CHECK(format_fixed(0.42, 2) == "0.42");
  CHECK(format_fixed(0.145, 2) == "0.15");
  CHECK(format_fixed(0.43, 3) == "0.430");
  CHECK(format_fixed(0.0, 2) == "0.00");
  CHECK(format_fixed(0.9996, 3) == "1.000");
  CHECK(shortest_repr(0.1) == "0.1");
  CHECK(shortest_repr(1.0 / 3.0) == "0.3333333333333333");
}

TEST_CASE("cell texts follow the table typography") {
  const auto md = render_table(fixtures::report_fixture(), {3}, TableFormat::kMarkdown);
  CHECK(md.find("0.42 ± 0.14") != std::string::npos);
  CHECK(md.find("PUNC: 0.430") != std::string::npos);
  CHECK(md.find("PER: 0.660") != std::string::npos);
  CHECK(md.find("| 0 | 2 | 0.08 ± 0.01 |") != std::string::npos);
  CHECK(md.rfind("## DEC_CROSS", 0) == 0);
}

TEST_CASE("top-3 marks match a hand-sorted oracle") {
  const auto rows = table_rows(fixtures::report_fixture());
  const auto marks = top_k_marks(rows, 3);
  CHECK(marked(rows, marks[0]) == std::vector<Cell>{{0, 1}, {1, 0}, {1, 2}});  // 0.55, 0.42, 0.31 (tie goes to layer 0)
  CHECK(marked(rows, marks[1]) == std::vector<Cell>{{0, 1}, {1, 0}, {1, 2}});  // 0.412, 0.301, 0.254
  CHECK(marked(rows, marks[2]) == std::vector<Cell>{{0, 1}, {1, 0}, {1, 2}});  // 0.33, 0.27, 0.21
  CHECK(marked(rows, marks[3]) == std::vector<Cell>{{0, 0}, {1, 0}, {1, 2}});  // 0.644, 0.430, 0.312
  CHECK(marked(rows, marks[4]) == std::vector<Cell>{{0, 0}, {1, 1}, {1, 2}});  // 0.660, 0.512, 0.401
}

TEST_CASE("2 x 2 grid with k = 2 bolds exactly two cells") {
  std::vector<HeadProfile> grid(4);
  const std::vector<double> values = {0.3, 0.9, 0.1, 0.5};
  for (int i = 0; i < 4; ++i) {
    grid[static_cast<std::size_t>(i)].key = {AttentionType::DEC_SELF, i / 2, i % 2};
    grid[static_cast<std::size_t>(i)].pos_kl.mean = values[static_cast<std::size_t>(i)];
  }
  const auto rows = table_rows(grid);
  const auto marks = top_k_marks(rows, 2);
  CHECK(marked(rows, marks[0]) == std::vector<Cell>{{0, 1}, {1, 1}});
  const auto md = render_table(grid, {2}, TableFormat::kMarkdown);
  CHECK(md.find("| 0 | 1 | **0.90 ± 0.00** |") != std::string::npos);
  CHECK(md.find("| 1 | 1 | **0.50 ± 0.00** |") != std::string::npos);
  CHECK(md.find("| 0 | 0 | 0.30 ± 0.00 |") != std::string::npos);
  CHECK(md.find("| 1 | 0 | 0.10 ± 0.00 |") != std::string::npos);
}

TEST_CASE("all-zero profiles render and break ties by position") {
  std::vector<HeadProfile> grid(6);
  for (int i = 0; i < 6; ++i) grid[static_cast<std::size_t>(i)].key = {AttentionType::ENC_SELF, i / 3, i % 3};
  std::reverse(grid.begin(), grid.end());
  const auto rows = table_rows(grid);
  const auto marks = top_k_marks(rows, 3);
  for (std::size_t c = 0; c < kTableColumnCount; ++c) CHECK(marked(rows, marks[c]) == std::vector<Cell>{{0, 0}, {0, 1}, {0, 2}});
  CHECK_NOTHROW(render_table(grid, {3}, TableFormat::kCsv));
  CHECK_NOTHROW(render_table(grid, {3}, TableFormat::kJson));
}

TEST_CASE("incomplete and mixed grids are refused") {
  auto rows = fixtures::report_fixture();
  rows.pop_back();
  CHECK_THROWS_AS(render_table(rows, {3}, TableFormat::kMarkdown), IncompleteGrid);
  CHECK_THROWS_AS(render_table(std::vector<HeadProfile>{}, {3}, TableFormat::kMarkdown), IncompleteGrid);
  auto mixed = fixtures::report_fixture();
  mixed[0].key.type = AttentionType::ENC_SELF;
  CHECK_THROWS_AS(table_rows(mixed), IncompleteGrid);
}

TEST_CASE("report goldens") {
  const auto rows = fixtures::report_fixture();
  check_golden("dec_cross_table.md", render_table(rows, {3}, TableFormat::kMarkdown));
  check_golden("dec_cross_table.csv", render_table(rows, {3}, TableFormat::kCsv));
  check_golden("dec_cross_table.json", render_table(rows, {3}, TableFormat::kJson));
  const auto rp = relpos_fixture();
  check_golden("relpos_enc_self.csv", render_relpos_grid(rp, AttentionType::ENC_SELF, GridFormat::kCsv));
  check_golden("relpos_enc_self.json", render_relpos_grid(rp, AttentionType::ENC_SELF, GridFormat::kJson));
  check_golden("relpos_enc_self.svg", render_relpos_grid(rp, AttentionType::ENC_SELF, GridFormat::kSvg));
}

TEST_CASE("relative-position grid cells") {
  const auto rp = relpos_fixture();
  const auto grid = relpos_grid(rp, AttentionType::ENC_SELF);
  REQUIRE(grid.size() == 2);
  REQUIRE(grid[0].size() == 3);
  CHECK(grid[0][0] == 0.81);
  CHECK(grid[0][2] == 0.0);  // identity head: self offset is excluded
  CHECK(grid[1][1] == 1.0);  // every argmax one step back
  CHECK(grid[1][2] == 0.5);
  CHECK_THROWS_AS(relpos_grid(rp, AttentionType::DEC_CROSS), NotSquareType);
  CHECK_THROWS_AS(relpos_grid(fixtures::report_fixture(), AttentionType::DEC_SELF), IncompleteGrid);
}

TEST_CASE("relative-position csv parses back to the same grid") {
  const auto rp = relpos_fixture();
  const auto csv = render_relpos_grid(rp, AttentionType::ENC_SELF, GridFormat::kCsv);
  CHECK(parse_relpos_csv(csv) == relpos_grid(rp, AttentionType::ENC_SELF));
  CHECK_THROWS_AS(parse_relpos_csv("layer,head_0\n0,abc\n"), SchemaError);
}

TEST_CASE("relative-position grid from real matrices") {
  fixtures::TempDir dir("report-relpos");
  AnnotatedArticle a;
  a.article_id = "r";
  for (int i = 0; i < 5; ++i) a.source_tokens.push_back(fixtures::tok("w", UposTag::NOUN));
  a.summary_tokens = {fixtures::tok("s", UposTag::VERB)};
  const MatrixKey sup{AttentionType::ENC_SELF, 0, 0}, id{AttentionType::ENC_SELF, 0, 1};
  a.matrices[sup] = fixtures::shift_matrix(sup, {1, 1, 1, 1, -1});
  a.matrices[id] = fixtures::shift_matrix(id, {0, 0, 0, 0, 0});
  const auto corpus = fixtures::round_trip({a}, dir.path());
  const auto profiles = profile_all(corpus);
  const auto grid = relpos_grid(profiles, AttentionType::ENC_SELF);
  CHECK(grid[0][0] == 0.8);
  CHECK(grid[0][1] == 0.0);
}
