#include "sgq/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "sgq/graph.hpp"

namespace sgq {

std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::string to_csv(const MetricsRow& row) {
  return row.config_id + "," + format_number(row.average_bits) + "," + format_number(row.memory_mb) + "," +
         format_number(row.saving) + "," + format_number(row.accuracy);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw FormatError(where + ": bad number '" + text + "'");
  return v;
}

}  // namespace

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("file not found: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError(path.string() + ": missing metrics header");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 5) throw FormatError(where + ": expected 5 columns");
    rows.push_back({cells[0], parse_double(cells[1], where), parse_double(cells[2], where), parse_double(cells[3], where),
                    parse_double(cells[4], where)});
  }
  return rows;
}

void upsert_metrics(const std::filesystem::path& path, const MetricsRow& row) {
  std::map<std::string, MetricsRow> by_id;
  if (std::filesystem::exists(path)) {
    for (auto& r : read_metrics(path)) by_id[r.config_id] = r;
  }
  by_id[row.config_id] = row;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& [id, r] : by_id) out << to_csv(r) << '\n';
}

std::string granularity_of(const std::string& config_id) { return config_id.substr(0, config_id.find(':')); }

Report build_report(std::vector<MetricsRow> rows) {
  if (rows.empty()) throw std::invalid_argument("report: no metrics rows");
  std::sort(rows.begin(), rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    const auto ga = granularity_of(a.config_id), gb = granularity_of(b.config_id);
    if (ga != gb) return ga < gb;
    if (a.memory_mb != b.memory_mb) return a.memory_mb < b.memory_mb;
    return a.config_id < b.config_id;
  });
  std::size_t id_width = 9;
  for (const auto& r : rows) id_width = std::max(id_width, r.config_id.size());

  Report report;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s  %12s  %12s  %10s  %10s\n", static_cast<int>(id_width), "config-id", "avg bits",
                "memory (MB)", "saving", "accuracy");
  report.table += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %12s  %12s  %9sx  %9s%%\n", static_cast<int>(id_width), r.config_id.c_str(),
                  format_number(r.average_bits).c_str(), format_number(r.memory_mb).c_str(),
                  format_number(r.saving).c_str(), format_number(100.0 * r.accuracy).c_str());
    report.table += buf;
  }
  report.series_csv = "granularity,memory_mb,error_rate\n";
  for (const auto& r : rows) {
    report.series_csv +=
        granularity_of(r.config_id) + "," + format_number(r.memory_mb) + "," + format_number(1.0 - r.accuracy) + "\n";
  }
  return report;
}

std::string search_log_csv(const SearchResult& result) {
  std::string out = "iteration,config-id,predicted_acc,measured_acc,memory_mb\n";
  for (const auto& m : result.all_measured) {
    out += std::to_string(m.iteration) + "," + m.config.id() + "," + (m.predicted ? format_number(*m.predicted) : "") +
           "," + format_number(m.accuracy) + "," + format_number(m.memory) + "\n";
  }
  return out;
}

std::string trajectory_csv(const SearchResult& result) {
  std::string out = "iteration,best_memory_mb\n";
  for (std::size_t i = 0; i < result.trajectory.size(); ++i) {
    const double v = result.trajectory[i];
    out += std::to_string(i + 1) + "," + (std::isfinite(v) ? format_number(v) : "") + "\n";
  }
  return out;
}

}  // namespace sgq
