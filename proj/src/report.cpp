#include "ctlm/report.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "ctlm/error.hpp"

namespace ctlm {

namespace {

std::string cell(const std::optional<double>& v, int precision) {
  if (!v) return "--";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

}  // namespace

const std::vector<MetricColumn>& default_columns() {
  static const std::vector<MetricColumn> columns = {
      {"rep_1", "rep-1", true, 4}, {"rep_2", "rep-2", true, 4}, {"rep_3", "rep-3", true, 4},
      {"rep_4", "rep-4", true, 4}, {"dist_1", "dist-1", false, 4}, {"uniq_1", "uniq-1", false, 0},
      {"ppl", "ppl", true, 2},     {"ppl_s", "ppl-s", true, 2},
  };
  return columns;
}

ComparisonTable compare_reports(const std::vector<nlohmann::json>& reports, const std::vector<MetricColumn>& columns) {
  if (reports.size() < 2) throw InputError("a comparison needs at least two reports");
  ComparisonTable t;
  t.columns = columns;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    t.names.push_back(r.value("name", std::string()).empty() ? "run" + std::to_string(i + 1)
                                                             : r.value("name", std::string()));
    std::vector<std::optional<double>> row;
    for (const auto& c : columns) {
      if (r.contains(c.key) && r[c.key].is_number()) {
        row.emplace_back(r[c.key].get<double>());
      } else {
        row.emplace_back(std::nullopt);
      }
    }
    t.values.push_back(std::move(row));
  }
  t.best.assign(reports.size(), std::vector<bool>(columns.size(), false));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    std::optional<double> winner;
    for (const auto& row : t.values) {
      if (!row[c]) continue;
      if (!winner || (columns[c].lower_is_better ? *row[c] < *winner : *row[c] > *winner)) winner = row[c];
    }
    for (std::size_t r = 0; r < t.values.size(); ++r) t.best[r][c] = winner && t.values[r][c] == winner;
  }
  return t;
}

std::string ComparisonTable::text() const {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"method"};
  for (const auto& c : columns) header.push_back(c.label + (c.lower_is_better ? " (lo)" : " (hi)"));
  cells.push_back(header);
  for (std::size_t r = 0; r < names.size(); ++r) {
    std::vector<std::string> line = {names[r]};
    for (std::size_t c = 0; c < columns.size(); ++c) {
      line.push_back(cell(values[r][c], columns[c].precision) + (best[r][c] ? "*" : ""));
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream os;
  for (std::size_t l = 0; l < cells.size(); ++l) {
    for (std::size_t c = 0; c < cells[l].size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << cells[l][c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << cells[l][c];
      }
    }
    os << '\n';
    if (l == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

std::string ComparisonTable::csv() const {
  std::ostringstream os;
  os << "method";
  for (const auto& c : columns) os << ',' << c.key;
  os << '\n';
  for (std::size_t r = 0; r < names.size(); ++r) {
    os << names[r];
    for (std::size_t c = 0; c < columns.size(); ++c) {
      os << ',';
      if (values[r][c]) {
        os << std::setprecision(17) << *values[r][c];
      } else {
        os << "--";
      }
    }
    os << '\n';
  }
  os << "best";
  for (std::size_t c = 0; c < columns.size(); ++c) {
    os << ',';
    std::string winners;
    for (std::size_t r = 0; r < names.size(); ++r) {
      if (!best[r][c]) continue;
      if (!winners.empty()) winners += ';';
      winners += names[r];
    }
    os << winners;
  }
  os << '\n';
  return os.str();
}

}  // namespace ctlm
