#include "invcode/report.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "invcode/error.hpp"

namespace invcode {

bool Metric::operator==(const Metric& o) const {
  const bool same = value == o.value || (std::isnan(value) && std::isnan(o.value));
  return same && count == o.count;
}

bool ExperimentReport::ok() const {
  for (const auto& c : cells)
    if (!c.ok) return false;
  return true;
}

const ReportCell* ExperimentReport::find(const nlohmann::json& key) const {
  for (const auto& c : cells)
    if (c.key == key) return &c;
  return nullptr;
}

nlohmann::json ExperimentReport::to_json() const {
  auto cells_json = nlohmann::json::array();
  for (const auto& c : cells) {
    auto metrics = nlohmann::json::object();
    for (const auto& [name, m] : c.metrics) {
      metrics[name] = {{"value", std::isfinite(m.value) ? nlohmann::json(m.value)
                                                        : nlohmann::json(nullptr)},
                       {"count", m.count}};
    }
    nlohmann::json cell = {{"key", c.key}, {"metrics", std::move(metrics)}, {"ok", c.ok}};
    if (!c.note.empty()) cell["note"] = c.note;
    cells_json.push_back(std::move(cell));
  }
  return {{"name", name}, {"parameters", parameters}, {"ok", ok()}, {"cells", std::move(cells_json)}};
}

ExperimentReport ExperimentReport::from_json(const nlohmann::json& j) {
  try {
    ExperimentReport r;
    r.name = j.at("name").get<std::string>();
    r.parameters = j.at("parameters");
    for (const auto& c : j.at("cells")) {
      ReportCell cell;
      cell.key = c.at("key");
      cell.ok = c.at("ok").get<bool>();
      cell.note = c.value("note", std::string());
      for (const auto& [name, m] : c.at("metrics").items()) {
        const auto& v = m.at("value");
        cell.metrics[name] = Metric{v.is_null() ? std::nan("") : v.get<double>(),
                                    m.at("count").get<std::size_t>()};
      }
      r.cells.push_back(std::move(cell));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("report json: ") + e.what());
  }
}

std::string ExperimentReport::to_table() const {
  std::vector<std::string> key_cols;
  std::set<std::string> seen_keys;
  std::vector<std::string> metric_cols;
  std::set<std::string> seen_metrics;
  for (const auto& c : cells) {
    for (const auto& [k, _] : c.key.items())
      if (seen_keys.insert(k).second) key_cols.push_back(k);
    for (const auto& [m, _] : c.metrics)
      if (seen_metrics.insert(m).second) metric_cols.push_back(m);
  }

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = key_cols;
  header.insert(header.end(), metric_cols.begin(), metric_cols.end());
  header.emplace_back("n");
  header.emplace_back("ok");
  rows.push_back(header);
  for (const auto& c : cells) {
    std::vector<std::string> row;
    for (const auto& k : key_cols) row.push_back(c.key.contains(k) ? c.key.at(k).dump() : "-");
    std::size_t count = 0;
    for (const auto& m : metric_cols) {
      const auto it = c.metrics.find(m);
      if (it == c.metrics.end()) {
        row.emplace_back("-");
        continue;
      }
      std::ostringstream os;
      os << std::setprecision(6) << it->second.value;
      row.push_back(os.str());
      count = std::max(count, it->second.count);
    }
    row.push_back(std::to_string(count));
    row.emplace_back(c.ok ? "yes" : "NO");
    rows.push_back(std::move(row));
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream out;
  out << name << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << row[i];
    out << "\n";
  }
  return out.str();
}

ReportPaths write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());

  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream stamp;
  stamp << std::put_time(&utc, "%Y%m%dT%H%M%SZ");

  ReportPaths paths{dir / (report.name + "-" + stamp.str() + ".json"),
                    dir / (report.name + "-" + stamp.str() + ".txt")};
  std::ofstream json(paths.json);
  json << report.to_json().dump(2) << "\n";
  std::ofstream table(paths.table);
  table << report.to_table();
  if (!json || !table) throw Error(ErrorCode::Io, "failed writing report to " + dir.string());
  return paths;
}

}  // namespace invcode
