// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "headscope/metrics.hpp"

namespace headscope {

enum class TableFormat { kMarkdown, kCsv, kJson };
enum class GridFormat { kCsv, kJson, kSvg };

struct TableSpec {
  /// Cells marked per numeric column (the highest values; ties by layer, then head).
  std::size_t top_k = 3;
};

/// Column order of the metric table.
enum class TableColumn { kPosKl, kNep, kNeKl, kTopPos, kTopNe };
inline constexpr std::size_t kTableColumnCount = 5;

/// Profiles of one attention type forming a full layer × head grid, sorted
/// by (layer, head). Throws IncompleteGrid.
std::vector<HeadProfile> table_rows(std::span<const HeadProfile> profiles);

/// Which rows are marked top-k in each column; indexed [column][row].
std::vector<std::vector<bool>> top_k_marks(std::span<const HeadProfile> rows, std::size_t k);

std::string render_table(std::span<const HeadProfile> profiles, const TableSpec& spec, TableFormat format);

/// Each head's max ratio over nonzero offsets, as an n_layers × n_heads grid.
/// `profiles` may hold several types; only `type` is used. Throws
/// NotSquareType for DEC_CROSS and IncompleteGrid for gaps.
std::vector<std::vector<double>> relpos_grid(std::span<const HeadProfile> profiles, AttentionType type);
std::string render_relpos_grid(std::span<const HeadProfile> profiles, AttentionType type, GridFormat format);

/// Parses the csv variant of render_relpos_grid back into a grid.
std::vector<std::vector<double>> parse_relpos_csv(std::string_view csv);

std::vector<HeadProfile> profiles_of_type(std::span<const HeadProfile> profiles, AttentionType type);

}  // namespace headscope
