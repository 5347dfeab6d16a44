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

// Experiment configuration. JSON is the canonical form; every field has a
// default, and validate() names the offending field.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "icl_kd_lab/feature_map.hpp"

namespace icl_kd_lab::harness {

using json = nlohmann::json;

enum class Suite { kDuality, kKdInit, kGenbound, kOffset, kRiskgap, kRank };

inline std::string_view to_string(Suite suite) {
  switch (suite) {
    case Suite::kDuality: return "duality";
    case Suite::kKdInit: return "kd-init";
    case Suite::kGenbound: return "genbound";
    case Suite::kOffset: return "offset";
    case Suite::kRiskgap: return "riskgap";
    case Suite::kRank: return "rank";
  }
  return "unknown";
}

inline Suite parse_suite(std::string_view name) {
  for (Suite s : {Suite::kDuality, Suite::kKdInit, Suite::kGenbound, Suite::kOffset,
                  Suite::kRiskgap, Suite::kRank}) {
    if (name == to_string(s)) return s;
  }
  throw Error(ErrorCode::kInvalidConfig, "suite: unknown suite '" + std::string(name) + "'");
}

enum class ShiftFamily { kMeanShift, kCovarianceScale, kMixture };

inline std::string_view to_string(ShiftFamily f) {
  switch (f) {
    case ShiftFamily::kMeanShift: return "mean_shift";
    case ShiftFamily::kCovarianceScale: return "covariance_scale";
    case ShiftFamily::kMixture: return "mixture";
  }
  return "unknown";
}

inline ShiftFamily parse_shift_family(std::string_view name) {
  if (name == "mean_shift") return ShiftFamily::kMeanShift;
  if (name == "covariance_scale") return ShiftFamily::kCovarianceScale;
  if (name == "mixture") return ShiftFamily::kMixture;
  throw Error(ErrorCode::kInvalidConfig, "shift.family: unknown family '" + std::string(name) + "'");
}

/// Upper limits for the duality and kd-init sweeps (sizes are drawn per trial
/// in [1, max], M in [0, max]); exact sizes for the other suites.
struct Dims {
  Index d = 4;
  Index k = 4;
  Index m = 4;
  Index N = 8;
  Index M = 4;
  Index r = 32;
};

struct ShiftConfig {
  ShiftFamily family = ShiftFamily::kMeanShift;
  std::vector<double> mu_grid{0.0, 0.25, 0.5, 1.0};
  double covariance_scale = 1.0;
  double mixture_weight = 0.5;
  double mu_good = 0.1;
  double mu_bad = 1.0;
};

/// Frobenius caps for the generated projections and declared bound caps.
/// A declared cap of 0 means "use the measured supremum only".
struct CapsConfig {
  double M_x = 1.0;
  double wq_fro = 1.0;
  double wk_fro = 1.0;
  double wv_fro = 1.0;
  double B = 1.0;
  double C = 0.0;
  double D_T = 0.0;
  double M_phi = 0.0;
  double M_V = 0.0;
  double M_T = 0.0;
};

struct EtaConfig {
  enum class Policy { kMatched, kFixed };
  Policy policy = Policy::kMatched;
  double value = 1.0;
};

struct ExperimentConfig {
  Suite suite = Suite::kDuality;
  std::uint64_t seed = 42;
  int trials = 200;
  int repeats = 5;
  Dims dims;
  Index n_samples = 4096;
  Index holdout_factor = 50;
  FeatureMapKind map_kind = FeatureMapKind::kPositiveRandom;
  std::uint64_t map_seed = 0;
  ShiftConfig shift;
  CapsConfig caps;
  EtaConfig eta;
  double delta = 0.05;
  double ridge = 1e-8;
  bool scale_by_sqrt_d = true;
  int rademacher_draws = 10'000;
  int loss_class_draws = 500;
  int ascent_steps = 50;
  std::vector<Index> n_grid{16, 64, 256};
  int resamples = 100;
  int pool_size = 6;
  Index greedy_k = 2;

  void validate() const;
};

namespace detail {

inline void check(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw Error(ErrorCode::kInvalidConfig, field + ": " + why);
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  using detail::check;
  check(trials >= 1, "trials", "must be >= 1");
  check(repeats >= 1, "repeats", "must be >= 1");
  check(dims.d >= 1, "dims.d", "must be >= 1");
  check(dims.k >= 1, "dims.k", "must be >= 1");
  check(dims.m >= 1, "dims.m", "must be >= 1");
  check(dims.N >= 1, "dims.N", "must be >= 1");
  check(dims.M >= 0, "dims.M", "must be >= 0");
  check(dims.r >= 1, "dims.r", "must be >= 1");
  check(n_samples >= 1, "n_samples", "must be >= 1");
  check(holdout_factor >= 1, "holdout_factor", "must be >= 1");
  check(delta > 0.0 && delta < 1.0, "delta", "must lie in (0, 1)");
  check(ridge >= 0.0, "ridge", "must be >= 0");
  check(caps.M_x > 0.0, "caps.M_x", "must be > 0");
  for (auto [name, v] : {std::pair{"caps.wq_fro", caps.wq_fro}, {"caps.wk_fro", caps.wk_fro},
                         {"caps.wv_fro", caps.wv_fro}, {"caps.B", caps.B}, {"caps.C", caps.C},
                         {"caps.D_T", caps.D_T}, {"caps.M_phi", caps.M_phi},
                         {"caps.M_V", caps.M_V}, {"caps.M_T", caps.M_T}}) {
    check(v >= 0.0, name, "must be >= 0");
  }
  check(eta.value > 0.0, "eta.value", "must be > 0");
  check(shift.covariance_scale > 0.0, "shift.covariance_scale", "must be > 0");
  check(shift.mixture_weight >= 0.0 && shift.mixture_weight <= 1.0, "shift.mixture_weight",
        "must lie in [0, 1]");
  check(!shift.mu_grid.empty(), "shift.mu_grid", "must not be empty");
  check(rademacher_draws >= 100, "rademacher_draws", "must be >= 100");
  check(loss_class_draws >= 100, "loss_class_draws", "must be >= 100");
  check(ascent_steps >= 1, "ascent_steps", "must be >= 1");
  check(!n_grid.empty(), "n_grid", "must not be empty");
  for (Index n : n_grid) check(n >= 1, "n_grid", "entries must be >= 1");
  check(resamples >= 30, "resamples", "must be >= 30");
  check(pool_size >= 1, "pool_size", "must be >= 1");
  check(greedy_k >= 1 && greedy_k <= pool_size, "greedy_k", "must lie in [1, pool_size]");
}

// JSON mapping. Unknown keys are rejected so typos do not silently fall back
// to defaults.

namespace detail {

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, prefix + key + ": " + e.what());
  }
}

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> known,
                           const std::string& prefix) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, prefix + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw Error(ErrorCode::kInvalidConfig, prefix + key + ": unknown key");
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::read;
  detail::reject_unknown(j,
                         {"suite", "seed", "trials", "repeats", "dims", "n_samples",
                          "holdout_factor", "feature_map", "shift", "caps", "eta", "delta",
                          "ridge", "scale_by_sqrt_d", "rademacher_draws", "loss_class_draws",
                          "ascent_steps",
                          "n_grid", "resamples", "pool_size", "greedy_k"},
                         "");
  ExperimentConfig c;
  if (j.contains("suite")) c.suite = parse_suite(j.at("suite").get<std::string>());
  read(j, "seed", c.seed, "");
  read(j, "trials", c.trials, "");
  read(j, "repeats", c.repeats, "");
  read(j, "n_samples", c.n_samples, "");
  read(j, "holdout_factor", c.holdout_factor, "");
  read(j, "delta", c.delta, "");
  read(j, "ridge", c.ridge, "");
  read(j, "scale_by_sqrt_d", c.scale_by_sqrt_d, "");
  read(j, "rademacher_draws", c.rademacher_draws, "");
  read(j, "loss_class_draws", c.loss_class_draws, "");
  read(j, "ascent_steps", c.ascent_steps, "");
  read(j, "n_grid", c.n_grid, "");
  read(j, "resamples", c.resamples, "");
  read(j, "pool_size", c.pool_size, "");
  read(j, "greedy_k", c.greedy_k, "");

  if (j.contains("dims")) {
    const json& d = j.at("dims");
    detail::reject_unknown(d, {"d", "k", "m", "N", "M", "r"}, "dims.");
    read(d, "d", c.dims.d, "dims.");
    read(d, "k", c.dims.k, "dims.");
    read(d, "m", c.dims.m, "dims.");
    read(d, "N", c.dims.N, "dims.");
    read(d, "M", c.dims.M, "dims.");
    read(d, "r", c.dims.r, "dims.");
  }
  if (j.contains("feature_map")) {
    const json& f = j.at("feature_map");
    detail::reject_unknown(f, {"kind", "d", "r", "seed"}, "feature_map.");
    if (f.contains("kind")) {
      try {
        c.map_kind = parse_feature_map_kind(f.at("kind").get<std::string>());
      } catch (const Error& e) {
        throw Error(ErrorCode::kInvalidConfig, std::string("feature_map.kind: ") + e.what());
      }
    }
    // The map's input dim is the key dim; "d" is accepted for symmetry with
    // the standalone FeatureMapSpec form and must agree with dims.k.
    if (f.contains("d")) {
      Index d = 0;
      read(f, "d", d, "feature_map.");
      c.dims.k = d;
    }
    read(f, "r", c.dims.r, "feature_map.");
    read(f, "seed", c.map_seed, "feature_map.");
  }
  if (j.contains("shift")) {
    const json& s = j.at("shift");
    detail::reject_unknown(s, {"family", "mu_grid", "covariance_scale", "mixture_weight",
                               "mu_good", "mu_bad"},
                           "shift.");
    if (s.contains("family")) c.shift.family = parse_shift_family(s.at("family").get<std::string>());
    read(s, "mu_grid", c.shift.mu_grid, "shift.");
    read(s, "covariance_scale", c.shift.covariance_scale, "shift.");
    read(s, "mixture_weight", c.shift.mixture_weight, "shift.");
    read(s, "mu_good", c.shift.mu_good, "shift.");
    read(s, "mu_bad", c.shift.mu_bad, "shift.");
  }
  if (j.contains("caps")) {
    const json& k = j.at("caps");
    detail::reject_unknown(k, {"M_x", "wq_fro", "wk_fro", "wv_fro", "B", "C", "D_T", "M_phi",
                               "M_V", "M_T"},
                           "caps.");
    read(k, "M_x", c.caps.M_x, "caps.");
    read(k, "wq_fro", c.caps.wq_fro, "caps.");
    read(k, "wk_fro", c.caps.wk_fro, "caps.");
    read(k, "wv_fro", c.caps.wv_fro, "caps.");
    read(k, "B", c.caps.B, "caps.");
    read(k, "C", c.caps.C, "caps.");
    read(k, "D_T", c.caps.D_T, "caps.");
    read(k, "M_phi", c.caps.M_phi, "caps.");
    read(k, "M_V", c.caps.M_V, "caps.");
    read(k, "M_T", c.caps.M_T, "caps.");
  }
  if (j.contains("eta")) {
    const json& e = j.at("eta");
    detail::reject_unknown(e, {"policy", "value"}, "eta.");
    if (e.contains("policy")) {
      const auto p = e.at("policy").get<std::string>();
      if (p == "matched") c.eta.policy = EtaConfig::Policy::kMatched;
      else if (p == "fixed") c.eta.policy = EtaConfig::Policy::kFixed;
      else throw Error(ErrorCode::kInvalidConfig, "eta.policy: unknown policy '" + p + "'");
    }
    read(e, "value", c.eta.value, "eta.");
  }
  c.validate();
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  return json{
      {"suite", to_string(c.suite)},
      {"seed", c.seed},
      {"trials", c.trials},
      {"repeats", c.repeats},
      {"dims", {{"d", c.dims.d}, {"k", c.dims.k}, {"m", c.dims.m}, {"N", c.dims.N},
                {"M", c.dims.M}, {"r", c.dims.r}}},
      {"n_samples", c.n_samples},
      {"holdout_factor", c.holdout_factor},
      {"feature_map", {{"kind", to_string(c.map_kind)}, {"d", c.dims.k}, {"r", c.dims.r},
                       {"seed", c.map_seed}}},
      {"shift", {{"family", to_string(c.shift.family)}, {"mu_grid", c.shift.mu_grid},
                 {"covariance_scale", c.shift.covariance_scale},
                 {"mixture_weight", c.shift.mixture_weight}, {"mu_good", c.shift.mu_good},
                 {"mu_bad", c.shift.mu_bad}}},
      {"caps", {{"M_x", c.caps.M_x}, {"wq_fro", c.caps.wq_fro}, {"wk_fro", c.caps.wk_fro},
                {"wv_fro", c.caps.wv_fro}, {"B", c.caps.B}, {"C", c.caps.C},
                {"D_T", c.caps.D_T}, {"M_phi", c.caps.M_phi}, {"M_V", c.caps.M_V},
                {"M_T", c.caps.M_T}}},
      {"eta", {{"policy", c.eta.policy == EtaConfig::Policy::kMatched ? "matched" : "fixed"},
               {"value", c.eta.value}}},
      {"delta", c.delta},
      {"ridge", c.ridge},
      {"scale_by_sqrt_d", c.scale_by_sqrt_d},
      {"rademacher_draws", c.rademacher_draws},
      {"loss_class_draws", c.loss_class_draws},
      {"ascent_steps", c.ascent_steps},
      {"n_grid", c.n_grid},
      {"resamples", c.resamples},
      {"pool_size", c.pool_size},
      {"greedy_k", c.greedy_k},
  };
}

}  // namespace icl_kd_lab::harness
