#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace invcode {

/// One measured quantity and the number of samples behind it. NaN values
/// (undefined metrics) serialize as null.
struct Metric {
  double value = 0.0;
  std::size_t count = 0;

  bool operator==(const Metric& o) const;
};

struct ReportCell {
  /// Identifies the cell, e.g. {"k": 10, "sigma": 0.1}.
  nlohmann::json key = nlohmann::json::object();
  std::map<std::string, Metric> metrics;
  bool ok = true;
  std::string note;

  bool operator==(const ReportCell&) const = default;
};

struct ExperimentReport {
  std::string name;
  nlohmann::json parameters = nlohmann::json::object();
  std::vector<ReportCell> cells;

  bool ok() const;
  const ReportCell* find(const nlohmann::json& key) const;

  nlohmann::json to_json() const;
  static ExperimentReport from_json(const nlohmann::json& j);
  /// Aligned-column text table, one row per cell.
  std::string to_table() const;

  bool operator==(const ExperimentReport&) const = default;
};

struct ReportPaths {
  std::filesystem::path json;
  std::filesystem::path table;
};

/// Writes <dir>/<name>-<UTC timestamp>.json and .txt, creating `dir`.
ReportPaths write_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace invcode
