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

// icl-kd-lab: runs a verification suite from a JSON config and writes the
// report bundle, or ranks candidate prompt sets stored as CSV token matrices.
//
// Exit status: 0 when every asserted bound held and no trial failed, 1 when
// a bound was violated or a trial errored, 2 for usage, config, or I/O errors.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "icl_kd_lab/icl_kd_lab.hpp"

namespace {

namespace fs = std::filesystem;
using icl_kd_lab::Error;
using icl_kd_lab::ErrorCode;
using nlohmann::json;
namespace harness = icl_kd_lab::harness;

constexpr int kExitViolations = 1;
constexpr int kExitUsage = 2;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, "'" + path + "': " + e.what());
  }
}

std::uint64_t parse_seed(const std::string& text, const char* source) {
  try {
    std::size_t used = 0;
    const auto value = std::stoull(text, &used, 0);
    if (used == text.size()) return value;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kInvalidConfig, std::string(source) + ": not a seed: '" + text + "'");
}

struct SuiteOptions {
  std::string config;
  std::string out;
  std::string format = "json";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool omit_wall_clock = false;
};

int run_suite(harness::Suite suite, const SuiteOptions& opt) {
  json j = read_json_file(opt.config);
  if (j.contains("suite") && j.at("suite") != std::string(harness::to_string(suite))) {
    throw Error(ErrorCode::kInvalidConfig,
                "suite: config names '" + j.at("suite").dump() + "' but the command is '" +
                    std::string(harness::to_string(suite)) + "'");
  }
  j["suite"] = std::string(harness::to_string(suite));
  harness::ExperimentConfig cfg = harness::config_from_json(j);
  // Precedence: --seed, then ICL_KD_LAB_SEED, then the config file.
  if (opt.seed) {
    cfg.seed = *opt.seed;
  } else if (const char* env = std::getenv("ICL_KD_LAB_SEED"); env != nullptr && *env != '\0') {
    cfg.seed = parse_seed(env, "ICL_KD_LAB_SEED");
  }

  const auto format = harness::parse_report_format(opt.format);
  const harness::ReportBundle bundle =
      harness::run_experiment(cfg, {opt.jobs, !opt.omit_wall_clock});
  harness::emit_report(bundle, opt.out, format);
  std::cout << bundle.suite << ": " << bundle.records.size() << " trials, " << bundle.violations
            << " violations, " << bundle.errors << " errors -> " << opt.out << "\n";
  return bundle.passed() ? 0 : kExitViolations;
}

struct RankOptions {
  std::string target;
  std::string candidates;
  std::string config;
  std::string out;
};

// Ranking config: {"feature_map": {"kind", "d", "r", "seed"}, "wk": <csv path,
// relative to the config file>, "eta", "teacher_cap", "feature_cap"}. Without
// "wk" the key projection is the identity on the token dim.
int run_rank(const RankOptions& opt) {
  const json cfg = read_json_file(opt.config);
  for (const auto& [key, _] : cfg.items()) {
    if (key != "feature_map" && key != "wk" && key != "eta" && key != "teacher_cap" &&
        key != "feature_cap") {
      throw Error(ErrorCode::kInvalidConfig, key + ": unknown key");
    }
  }
  const icl_kd_lab::Matrix target_tokens = icl_kd_lab::load_csv(opt.target);
  const icl_kd_lab::Index d = target_tokens.rows();

  icl_kd_lab::Matrix wk = icl_kd_lab::Matrix::Identity(d, d);
  if (cfg.contains("wk")) {
    fs::path wk_path = cfg.at("wk").get<std::string>();
    if (wk_path.is_relative()) wk_path = fs::path(opt.config).parent_path() / wk_path;
    wk = icl_kd_lab::load_csv(wk_path.string());
  }

  icl_kd_lab::FeatureMapSpec spec;
  spec.kind = icl_kd_lab::FeatureMapKind::kPositiveRandom;
  spec.input_dim = wk.rows();
  if (cfg.contains("feature_map")) {
    const json& f = cfg.at("feature_map");
    if (f.contains("kind"))
      spec.kind = icl_kd_lab::parse_feature_map_kind(f.at("kind").get<std::string>());
    if (f.contains("d")) spec.input_dim = f.at("d").get<icl_kd_lab::Index>();
    if (f.contains("r")) spec.feature_dim = f.at("r").get<icl_kd_lab::Index>();
    if (f.contains("seed")) spec.seed = f.at("seed").get<std::uint64_t>();
  }
  const icl_kd_lab::FeatureMap map = icl_kd_lab::build_feature_map(spec);

  icl_kd_lab::GapBoundConstants constants;
  constants.eta = cfg.value("eta", constants.eta);
  constants.teacher_cap = cfg.value("teacher_cap", constants.teacher_cap);
  constants.feature_cap = cfg.value("feature_cap", constants.feature_cap);

  std::vector<fs::path> files;
  if (!fs::is_directory(opt.candidates))
    throw Error(ErrorCode::kIoFailure, "'" + opt.candidates + "' is not a directory");
  for (const auto& entry : fs::directory_iterator(opt.candidates)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<icl_kd_lab::CandidateSet> candidates;
  for (const auto& f : files)
    candidates.push_back({f.stem().string(), icl_kd_lab::load_csv(f.string())});

  const icl_kd_lab::DistributionSample target{icl_kd_lab::SampleLabel::kTarget, target_tokens, {}};
  const icl_kd_lab::RankingReport report =
      icl_kd_lab::rank_prompt_sets(candidates, target, map, wk, constants);

  json entries = json::array();
  for (const auto& e : report.entries) entries.push_back({{"id", e.id}, {"score", e.score}});
  const json out{{"library", {{"name", icl_kd_lab::kLibraryName},
                              {"version", icl_kd_lab::kLibraryVersion}}},
                 {"feature_map", {{"kind", icl_kd_lab::to_string(spec.kind)},
                                  {"d", spec.input_dim},
                                  {"r", spec.feature_dim},
                                  {"seed", spec.seed}}},
                 {"map_seed", report.map_seed},
                 {"eta", report.eta},
                 {"M_T", report.M_T},
                 {"M_phi", report.M_phi},
                 {"entries", entries},
                 {"adjacent_gap_bounds", report.adjacent_gap_bounds}};
  std::ofstream os(opt.out);
  if (!os) throw Error(ErrorCode::kIoFailure, "cannot open '" + opt.out + "' for writing");
  os << out.dump(2) << "\n";
  std::cout << "ranked " << report.entries.size() << " candidate sets -> " << opt.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verification suites for the attention / distillation correspondence"};
  app.set_version_flag("--version", std::string(icl_kd_lab::kLibraryVersion));
  app.require_subcommand(1);

  struct SuiteCommand {
    harness::Suite suite;
    const char* alias;
    const char* help;
  };
  const std::vector<SuiteCommand> commands{
      {harness::Suite::kDuality, "verify-duality", "attention / gradient-descent duality sweep"},
      {harness::Suite::kKdInit, "verify-kd-init", "demonstration block vs one-step distillation"},
      {harness::Suite::kGenbound, "verify-genbound", "generalization bound and Rademacher checks"},
      {harness::Suite::kOffset, "verify-offset", "prompt-shift offset bound over a shift grid"},
      {harness::Suite::kRiskgap, "verify-riskgap", "risk gap between good and bad prompt samples"},
      {harness::Suite::kRank, nullptr, "synthetic prompt-ranking and subset-selection check"},
  };

  SuiteOptions suite_opt;
  std::optional<harness::Suite> chosen;
  std::string seed_text;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(std::string(harness::to_string(c.suite)), c.help);
    if (c.alias != nullptr) sub->alias(c.alias);
    sub->add_option("--config", suite_opt.config, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", suite_opt.out, "report path")->required();
    sub->add_option("--format", suite_opt.format, "report format")
        ->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--seed", seed_text, "master seed (overrides config and ICL_KD_LAB_SEED)");
    sub->add_option("--jobs", suite_opt.jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--omit-wall-clock", suite_opt.omit_wall_clock,
                  "leave the wall-clock field out of the report");
    sub->callback([&chosen, suite = c.suite] { chosen = suite; });
  }

  RankOptions rank_opt;
  bool ranking = false;
  CLI::App* rank = app.add_subcommand("rank-prompts", "rank candidate prompt sets by MMD");
  rank->add_option("--target", rank_opt.target, "target tokens (CSV)")
      ->required()
      ->check(CLI::ExistingFile);
  rank->add_option("--candidates", rank_opt.candidates, "directory of candidate CSV files")
      ->required()
      ->check(CLI::ExistingDirectory);
  rank->add_option("--config", rank_opt.config, "ranking config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  rank->add_option("--out", rank_opt.out, "output JSON")->required();
  rank->callback([&ranking] { ranking = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (ranking) return run_rank(rank_opt);
    if (!seed_text.empty()) suite_opt.seed = parse_seed(seed_text, "--seed");
    return run_suite(*chosen, suite_opt);
  } catch (const Error& e) {
    std::cerr << "error [" << icl_kd_lab::error_code_name(e.code()) << "]: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
