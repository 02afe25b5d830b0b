#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctlm {

struct MetricColumn {
  std::string key;
  std::string label;
  bool lower_is_better = true;
  int precision = 4;
};

/// rep-1..4 (lower is better), dist-1 and uniq-1 (higher), ppl and ppl-s (lower).
const std::vector<MetricColumn>& default_columns();

struct ComparisonTable {
  std::vector<MetricColumn> columns;
  std::vector<std::string> names;
  std::vector<std::vector<std::optional<double>>> values;  // [row][column]
  std::vector<std::vector<bool>> best;                      // [row][column]

  /// Aligned plain text; winners carry a trailing '*', missing values show as "--".
  std::string text() const;
  /// Values with "--" for missing cells, followed by a "best" row naming each column's winner(s).
  std::string csv() const;
};

/// Builds the table from metrics-report JSON objects (field "name" labels each row).
ComparisonTable compare_reports(const std::vector<nlohmann::json>& reports,
                                const std::vector<MetricColumn>& columns = default_columns());

}  // namespace ctlm
