// SPDX-License-Identifier: Apache-2.0

#include "sag/harness.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <cmath>
#include <fstream>

#ifndef SAG_VERSION
#define SAG_VERSION "0.0.0"
#endif

namespace sag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return fmt::format("{}", v.get<std::uint64_t>());
  if (v.is_number_integer()) return fmt::format("{}", v.get<std::int64_t>());
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isnan(d)) return "nan";
    return fmt::format("{}", d);
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char c : s) {
      if (c == '"') quoted += '"';
      quoted += c;
    }
    return quoted + "\"";
  }
  return v.dump();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << text;
}

}  // namespace

void ExperimentReport::add_row(json row) {
  if (!row.is_array() || row.size() != columns.size()) {
    throw std::logic_error(fmt::format("row has {} cells but the report declares {} columns",
                                       row.is_array() ? row.size() : 0, columns.size()));
  }
  rows.push_back(std::move(row));
}

std::string ExperimentReport::to_csv() const {
  std::string out;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out += (c ? "," : "") + columns[c];
  }
  out += '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      out += csv_cell(row[c]);
    }
    out += '\n';
  }
  return out;
}

json ExperimentReport::to_json() const {
  return {{"kind", kind},
          {"environment", environment_fingerprint()},
          {"columns", columns},
          {"rows", rows},
          {"summary", summary}};
}

ExperimentReport ExperimentReport::from_json(const json& j) {
  ExperimentReport r;
  try {
    r.kind = j.at("kind").get<std::string>();
    r.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto& row : j.at("rows")) r.add_row(row);
    r.summary = j.value("summary", json::object());
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("malformed report: {}", e.what()));
  } catch (const std::logic_error& e) {
    throw std::invalid_argument(fmt::format("malformed report: {}", e.what()));
  }
  return r;
}

json environment_fingerprint() {
  return {{"name", "sag"},
          {"version", SAG_VERSION},
          {"precision", "float64"},
          {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                                EIGEN_MINOR_VERSION)}};
}

void write_outputs(const ExperimentReport& report, const RunConfig& config) {
  fs::create_directories(config.out_dir);
  write_text(config.out_dir / "report.csv", report.to_csv());
  write_text(config.out_dir / "report.json", report.to_json().dump(2) + "\n");
  write_text(config.out_dir / "config.resolved.json", config.to_json().dump(2) + "\n");
  if (report.summary.contains("m_curve")) {
    std::string csv = "n,mean_error,stderr,num_samples\n";
    for (const auto& p : report.summary["m_curve"]["points"]) {
      csv += fmt::format("{},{},{},{}\n", p["n"].get<int>(), p["mean_error"].get<double>(),
                         p["stderr"].get<double>(), p["num_samples"].get<int>());
    }
    write_text(config.out_dir / "m_curve.csv", csv);
  }
  emit_plots(report, config.out_dir);
}

}  // namespace sag
