// SPDX-License-Identifier: Apache-2.0
#include "headscope/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "headscope/error.hpp"
#include "headscope/numeric.hpp"

namespace headscope {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kTableColumnCount> kColumnTitles = {"POS-KL", "NEP", "NE-KL", "#1 POS", "#1 NE"};
constexpr std::array<std::string_view, kTableColumnCount> kColumnKeys = {"pos_kl", "nep", "ne_kl", "top_pos", "top_ne"};

double column_value(const HeadProfile& p, std::size_t column) {
  switch (static_cast<TableColumn>(column)) {
    case TableColumn::kPosKl: return p.pos_kl.mean;
    case TableColumn::kNep: return p.nep.mean;
    case TableColumn::kNeKl: return p.ne_kl.mean;
    case TableColumn::kTopPos: return p.top_pos.second;
    case TableColumn::kTopNe: return p.top_ne ? p.top_ne->second : -std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

std::string stat_cell(const MetricStat& s) { return format_fixed(s.mean, 2) + " ± " + format_fixed(s.std, 2); }

template <typename Tag>
std::string tag_cell(Tag tag, double ratio) {
  return std::string(to_string(tag)) + ": " + format_fixed(ratio, 3);
}

std::string cell_text(const HeadProfile& p, std::size_t column) {
  switch (static_cast<TableColumn>(column)) {
    case TableColumn::kPosKl: return stat_cell(p.pos_kl);
    case TableColumn::kNep: return stat_cell(p.nep);
    case TableColumn::kNeKl: return stat_cell(p.ne_kl);
    case TableColumn::kTopPos: return tag_cell(p.top_pos.first, p.top_pos.second);
    case TableColumn::kTopNe: return p.top_ne ? tag_cell(p.top_ne->first, p.top_ne->second) : "-";
  }
  return {};
}

json stat_json(const MetricStat& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

std::string stat_csv(const MetricStat& s) {
  return shortest_repr(s.mean) + "," + shortest_repr(s.std) + "," + std::to_string(s.n);
}

std::string render_markdown(std::span<const HeadProfile> rows, const std::vector<std::vector<bool>>& marks) {
  std::string out = "## " + std::string(to_string(rows.front().key.type)) + "\n\n";
  out += "| Layer | Head |";
  for (auto t : kColumnTitles) out += " " + std::string(t) + " |";
  out += "\n|---:|---:|";
  for (std::size_t c = 0; c < kTableColumnCount; ++c) out += "---|";
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += "| " + std::to_string(rows[r].key.layer) + " | " + std::to_string(rows[r].key.head) + " |";
    for (std::size_t c = 0; c < kTableColumnCount; ++c) {
      const auto text = cell_text(rows[r], c);
      out += " " + (marks[c][r] ? "**" + text + "**" : text) + " |";
    }
    out += "\n";
  }
  return out;
}

std::string render_csv(std::span<const HeadProfile> rows, const std::vector<std::vector<bool>>& marks) {
  std::string out =
      "type,layer,head,pos_kl_mean,pos_kl_std,pos_kl_n,nep_mean,nep_std,nep_n,ne_kl_mean,ne_kl_std,ne_kl_n,"
      "top_pos,top_pos_ratio,top_ne,top_ne_ratio";
  for (auto k : kColumnKeys) out += ",top_k_" + std::string(k);
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& p = rows[r];
    out += std::string(to_string(p.key.type)) + "," + std::to_string(p.key.layer) + "," + std::to_string(p.key.head);
    out += "," + stat_csv(p.pos_kl) + "," + stat_csv(p.nep) + "," + stat_csv(p.ne_kl);
    out += "," + std::string(to_string(p.top_pos.first)) + "," + shortest_repr(p.top_pos.second);
    if (p.top_ne) {
      out += "," + std::string(to_string(p.top_ne->first)) + "," + shortest_repr(p.top_ne->second);
    } else {
      out += ",,";
    }
    for (std::size_t c = 0; c < kTableColumnCount; ++c) out += marks[c][r] ? ",true" : ",false";
    out += "\n";
  }
  return out;
}

std::string render_json(std::span<const HeadProfile> rows, const std::vector<std::vector<bool>>& marks, std::size_t k) {
  json arr = json::array();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& p = rows[r];
    json top_k = json::object();
    for (std::size_t c = 0; c < kTableColumnCount; ++c) top_k[std::string(kColumnKeys[c])] = static_cast<bool>(marks[c][r]);
    arr.push_back({{"layer", p.key.layer},
                   {"head", p.key.head},
                   {"pos_kl", stat_json(p.pos_kl)},
                   {"nep", stat_json(p.nep)},
                   {"ne_kl", stat_json(p.ne_kl)},
                   {"top_pos", {{"tag", to_string(p.top_pos.first)}, {"ratio", p.top_pos.second}}},
                   {"top_ne", p.top_ne ? json{{"tag", to_string(p.top_ne->first)}, {"ratio", p.top_ne->second}} : json(nullptr)},
                   {"top_k", top_k}});
  }
  json doc = {{"type", to_string(rows.front().key.type)},
              {"n_layers", rows.back().key.layer + 1},
              {"n_heads", rows.back().key.head + 1},
              {"top_k", k},
              {"rows", arr}};
  return doc.dump(2) + "\n";
}

}  // namespace

std::vector<HeadProfile> profiles_of_type(std::span<const HeadProfile> profiles, AttentionType type) {
  std::vector<HeadProfile> out;
  for (const auto& p : profiles) {
    if (p.key.type == type) out.push_back(p);
  }
  return out;
}

std::vector<HeadProfile> table_rows(std::span<const HeadProfile> profiles) {
  if (profiles.empty()) throw IncompleteGrid("no profiles to render");
  const auto type = profiles.front().key.type;
  int n_layers = 0, n_heads = 0;
  std::set<std::pair<int, int>> cells;
  for (const auto& p : profiles) {
    if (p.key.type != type) throw IncompleteGrid("profiles mix attention types", {{"type", to_string(type)}});
    if (p.key.layer < 0 || p.key.head < 0) throw IncompleteGrid("negative layer or head index");
    if (!cells.insert({p.key.layer, p.key.head}).second) {
      throw IncompleteGrid("duplicate profile", {{"layer", p.key.layer}, {"head", p.key.head}});
    }
    n_layers = std::max(n_layers, p.key.layer + 1);
    n_heads = std::max(n_heads, p.key.head + 1);
  }
  if (cells.size() != static_cast<std::size_t>(n_layers) * static_cast<std::size_t>(n_heads)) {
    throw IncompleteGrid("profiles do not cover the layer x head grid",
                         {{"type", to_string(type)}, {"n_layers", n_layers}, {"n_heads", n_heads}, {"profiles", cells.size()}});
  }
  std::vector<HeadProfile> rows(profiles.begin(), profiles.end());
  std::sort(rows.begin(), rows.end(), [](const HeadProfile& a, const HeadProfile& b) { return a.key < b.key; });
  return rows;
}

std::vector<std::vector<bool>> top_k_marks(std::span<const HeadProfile> rows, std::size_t k) {
  std::vector<std::vector<bool>> marks(kTableColumnCount, std::vector<bool>(rows.size(), false));
  for (std::size_t c = 0; c < kTableColumnCount; ++c) {
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return column_value(rows[a], c) > column_value(rows[b], c); });
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) marks[c][order[i]] = true;
  }
  return marks;
}

std::string render_table(std::span<const HeadProfile> profiles, const TableSpec& spec, TableFormat format) {
  const auto rows = table_rows(profiles);
  const auto marks = top_k_marks(rows, spec.top_k);
  switch (format) {
    case TableFormat::kMarkdown: return render_markdown(rows, marks);
    case TableFormat::kCsv: return render_csv(rows, marks);
    case TableFormat::kJson: return render_json(rows, marks, spec.top_k);
  }
  return {};
}

std::vector<std::vector<double>> relpos_grid(std::span<const HeadProfile> profiles, AttentionType type) {
  if (!is_square(type)) throw NotSquareType("relative-position grids need a square attention type", {{"type", to_string(type)}});
  const auto rows = table_rows(profiles_of_type(profiles, type));
  const int n_layers = rows.back().key.layer + 1;
  const int n_heads = rows.back().key.head + 1;
  std::vector<std::vector<double>> grid(static_cast<std::size_t>(n_layers), std::vector<double>(static_cast<std::size_t>(n_heads)));
  for (const auto& p : rows) {
    const auto score = p.relpos_score();
    if (!score) throw IncompleteGrid("profile lacks relative-position ratios", {{"layer", p.key.layer}, {"head", p.key.head}});
    grid[static_cast<std::size_t>(p.key.layer)][static_cast<std::size_t>(p.key.head)] = *score;
  }
  return grid;
}

std::string render_relpos_grid(std::span<const HeadProfile> profiles, AttentionType type, GridFormat format) {
  const auto grid = relpos_grid(profiles, type);
  const std::size_t n_layers = grid.size();
  const std::size_t n_heads = grid.front().size();

  if (format == GridFormat::kCsv) {
    std::string out = "layer";
    for (std::size_t h = 0; h < n_heads; ++h) out += ",head_" + std::to_string(h);
    out += "\n";
    for (std::size_t l = 0; l < n_layers; ++l) {
      out += std::to_string(l);
      for (double v : grid[l]) out += "," + shortest_repr(v);
      out += "\n";
    }
    return out;
  }
  if (format == GridFormat::kJson) {
    json doc = {{"type", to_string(type)}, {"n_layers", n_layers}, {"n_heads", n_heads}, {"values", grid}};
    return doc.dump(2) + "\n";
  }

  constexpr int cell_w = 64, cell_h = 32, left = 48, top = 40;
  const auto width = left + cell_w * static_cast<int>(n_heads) + 8;
  const auto height = top + cell_h * static_cast<int>(n_layers) + 8;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<text x=\"" << left << "\" y=\"16\">" << to_string(type) << " relative position</text>\n";
  for (std::size_t h = 0; h < n_heads; ++h) {
    svg << "<text x=\"" << left + cell_w * static_cast<int>(h) + cell_w / 2 << "\" y=\"" << top - 6
        << "\" text-anchor=\"middle\">H" << h << "</text>\n";
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int y = top + cell_h * static_cast<int>(l);
    svg << "<text x=\"" << left - 6 << "\" y=\"" << y + cell_h / 2 + 4 << "\" text-anchor=\"end\">L" << l << "</text>\n";
    for (std::size_t h = 0; h < n_heads; ++h) {
      const double v = std::clamp(grid[l][h], 0.0, 1.0);
      const int x = left + cell_w * static_cast<int>(h);
      svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\"" << cell_h
          << "\" fill=\"#1f4e9c\" fill-opacity=\"" << format_fixed(v, 3) << "\" stroke=\"#cccccc\"/>\n";
      svg << "<text x=\"" << x + cell_w / 2 << "\" y=\"" << y + cell_h / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
          << (v > 0.5 ? "#ffffff" : "#000000") << "\">" << format_fixed(v, 2) << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::vector<double>> parse_relpos_csv(std::string_view csv) {
  std::vector<std::vector<double>> grid;
  std::size_t pos = csv.find('\n');
  if (pos == std::string_view::npos) throw SchemaError("relative-position csv has no header");
  std::size_t width = 0;
  for (char c : csv.substr(0, pos)) width += c == ',' ? 1 : 0;
  ++pos;
  while (pos < csv.size()) {
    auto end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    const auto line = csv.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t field_start = line.find(',');
    while (field_start != std::string_view::npos) {
      const auto next = line.find(',', field_start + 1);
      const auto field = line.substr(field_start + 1, next == std::string_view::npos ? std::string_view::npos : next - field_start - 1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc{} || ptr != field.data() + field.size()) throw SchemaError("malformed number in relative-position csv");
      row.push_back(v);
      field_start = next;
    }
    if (row.size() != width) throw SchemaError("relative-position csv row has the wrong width");
    grid.push_back(std::move(row));
  }
  return grid;
}

}  // namespace headscope
