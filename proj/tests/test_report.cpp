#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "invcode/error.hpp"
#include "invcode/report.hpp"

using namespace invcode;

namespace {

ExperimentReport sample_report() {
  ExperimentReport r;
  r.name = "demo";
  r.parameters = {{"seed", 3}, {"k_values", {2, 10}}};
  ReportCell a;
  a.key = {{"k", 2}};
  a.metrics["mean_error"] = Metric{1.2345678901234567e-16, 50000};
  a.metrics["ratio"] = Metric{std::nan(""), 10};
  ReportCell b;
  b.key = {{"k", 10}};
  b.metrics["mean_error"] = Metric{0.1 + 0.2, 50000};
  b.ok = false;
  b.note = "singular subset";
  r.cells = {a, b};
  return r;
}

}  // namespace

TEST(Report, JsonRoundTripIsExact) {
  const auto r = sample_report();
  const auto text = r.to_json().dump();
  const auto back = ExperimentReport::from_json(nlohmann::json::parse(text));
  EXPECT_TRUE(back == r);
  EXPECT_EQ(back.to_json().dump(), text);
  EXPECT_TRUE(r.to_json()["cells"][0]["metrics"]["ratio"]["value"].is_null());
  EXPECT_FALSE(r.ok());
}

TEST(Report, FindByKey) {
  const auto r = sample_report();
  ASSERT_NE(r.find({{"k", 10}}), nullptr);
  EXPECT_EQ(r.find({{"k", 10}})->note, "singular subset");
  EXPECT_EQ(r.find({{"k", 3}}), nullptr);
}

TEST(Report, TableHasOneRowPerCellWithCounts) {
  const auto table = sample_report().to_table();
  std::istringstream in(table);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "demo");
  EXPECT_NE(lines[1].find("mean_error"), std::string::npos);
  EXPECT_NE(lines[2].find("50000"), std::string::npos);
  EXPECT_NE(lines[3].find("NO"), std::string::npos);
  EXPECT_EQ(lines[1].size(), lines[2].size());
}

TEST(Report, WriteCreatesJsonAndTable) {
  const auto dir = std::filesystem::temp_directory_path() / "invcode_report_test";
  std::filesystem::remove_all(dir);
  const auto paths = write_report(sample_report(), dir / "nested");
  EXPECT_TRUE(std::filesystem::exists(paths.json));
  EXPECT_TRUE(std::filesystem::exists(paths.table));
  EXPECT_EQ(paths.json.extension(), ".json");
  EXPECT_EQ(paths.json.filename().string().rfind("demo-", 0), 0u);
  std::ifstream in(paths.json);
  const auto back = ExperimentReport::from_json(nlohmann::json::parse(in));
  EXPECT_TRUE(back == sample_report());
  std::filesystem::remove_all(dir);
}

TEST(Report, FromJsonRejectsGarbage) {
  EXPECT_THROW(ExperimentReport::from_json({{"name", "x"}}), Error);
}
