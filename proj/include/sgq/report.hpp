#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sgq/search.hpp"

namespace sgq {

/// Six significant digits ("%.6g").
std::string format_number(double value);

struct MetricsRow {
  std::string config_id;
  double average_bits = 0.0;
  double memory_mb = 0.0;
  double saving = 1.0;
  double accuracy = 0.0;
};

constexpr const char* kMetricsHeader = "config-id,average_bits,memory_mb,saving,accuracy";

std::string to_csv(const MetricsRow& row);
/// Throws FormatError on a malformed file.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);
/// Replaces the row with the same config-id (or adds it) and rewrites the
/// file sorted by config-id.
void upsert_metrics(const std::filesystem::path& path, const MetricsRow& row);

/// Granularity prefix of a config id ("lwq_cwq:2-4-2-2" -> "lwq_cwq").
std::string granularity_of(const std::string& config_id);

struct Report {
  std::string table;       // human-readable
  std::string series_csv;  // granularity,memory_mb,error_rate
};

/// Throws std::invalid_argument on an empty row set.
Report build_report(std::vector<MetricsRow> rows);

/// iteration,config-id,predicted_acc,measured_acc,memory_mb
std::string search_log_csv(const SearchResult& result);
/// iteration,best_memory_mb (empty cell while nothing is feasible)
std::string trajectory_csv(const SearchResult& result);

}  // namespace sgq
