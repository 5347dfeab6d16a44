// Copyright 2026 The icl-kd-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Report bundles: the JSON form is complete and reloadable; the CSV form is
// one row per trial with columns in sorted key order.

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl_kd_lab/errors.hpp"
#include "icl_kd_lab/version.hpp"

namespace icl_kd_lab::harness {

using json = nlohmann::json;

struct ReportBundle {
  std::string library_version = kLibraryVersion;
  std::string suite;
  json config = json::object();
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> trial_seeds;
  std::vector<json> records;             // one flat object per trial
  json diagnostics = json::object();     // suite-level checks outside the trial loop
  int violations = 0;                    // asserted bounds only
  int errors = 0;                        // trials that threw
  std::optional<double> wall_clock_seconds;

  bool passed() const { return violations == 0 && errors == 0; }
};

inline json bundle_to_json(const ReportBundle& b) {
  json j{
      {"library", {{"name", kLibraryName}, {"version", b.library_version}}},
      {"suite", b.suite},
      {"config", b.config},
      {"seeds", {{"master", b.master_seed}, {"trials", b.trial_seeds}}},
      {"records", b.records},
      {"diagnostics", b.diagnostics},
      {"aggregate", {{"trials", b.records.size()},
                     {"violations", b.violations},
                     {"errors", b.errors}}},
  };
  if (b.wall_clock_seconds) j["wall_clock_seconds"] = *b.wall_clock_seconds;
  return j;
}

inline ReportBundle bundle_from_json(const json& j) {
  try {
    ReportBundle b;
    b.library_version = j.at("library").at("version").get<std::string>();
    b.suite = j.at("suite").get<std::string>();
    b.config = j.at("config");
    b.master_seed = j.at("seeds").at("master").get<std::uint64_t>();
    b.trial_seeds = j.at("seeds").at("trials").get<std::vector<std::uint64_t>>();
    b.records = j.at("records").get<std::vector<json>>();
    b.diagnostics = j.at("diagnostics");
    b.violations = j.at("aggregate").at("violations").get<int>();
    b.errors = j.at("aggregate").at("errors").get<int>();
    if (j.contains("wall_clock_seconds"))
      b.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return b;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("report bundle: ") + e.what());
  }
}

inline bool operator==(const ReportBundle& a, const ReportBundle& b) {
  return bundle_to_json(a) == bundle_to_json(b);
}

namespace detail {

inline std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v.get<double>());
    return buf;
  }
  const std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

}  // namespace detail

/// Header row of sorted keys (union over records), then one row per record.
inline std::string bundle_to_csv(const ReportBundle& b) {
  std::set<std::string> keys;
  for (const json& r : b.records)
    for (const auto& [k, _] : r.items()) keys.insert(k);
  std::ostringstream os;
  bool first = true;
  for (const auto& k : keys) {
    os << (first ? "" : ",") << k;
    first = false;
  }
  os << '\n';
  for (const json& r : b.records) {
    first = true;
    for (const auto& k : keys) {
      os << (first ? "" : ",") << (r.contains(k) ? detail::csv_cell(r.at(k)) : "");
      first = false;
    }
    os << '\n';
  }
  return os.str();
}

enum class ReportFormat { kJson, kCsv };

inline ReportFormat parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  throw Error(ErrorCode::kInvalidArgument, "unknown report format '" + std::string(name) + "'");
}

inline std::string render_report(const ReportBundle& b, ReportFormat format) {
  return format == ReportFormat::kJson ? bundle_to_json(b).dump(2) + "\n" : bundle_to_csv(b);
}

inline void emit_report(const ReportBundle& b, const std::string& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open '" + path + "' for writing");
  out << render_report(b, format);
  if (!out) throw Error(ErrorCode::kIoFailure, "write to '" + path + "' failed");
}

inline ReportBundle load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, "'" + path + "': " + e.what());
  }
  return bundle_from_json(j);
}

}  // namespace icl_kd_lab::harness
