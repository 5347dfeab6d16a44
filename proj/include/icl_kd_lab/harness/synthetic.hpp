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

// Synthetic tasks: Gaussian projections scaled to Frobenius caps and tokens
// drawn from N(0, I/d), rescaled into the ball |x| <= M_x.
//
// A prompt distribution with shift value mu is the two-component mixture
//   (1 - w) N(0, I/d) + w N(mu e_1, s^2 I/d)
// where mean_shift uses w = 1, s = covariance_scale; covariance_scale uses
// w = 1, mean 0, s = covariance_scale (1 + mu); mixture uses
// w = mixture_weight, s = covariance_scale. mu = 0 with s = 1 reproduces the
// target distribution in every family.

#pragma once

#include <cstdint>
#include <vector>

#include "icl_kd_lab/attention_duality.hpp"
#include "icl_kd_lab/harness/config.hpp"
#include "icl_kd_lab/random.hpp"
#include "icl_kd_lab/shift_analysis.hpp"

namespace icl_kd_lab::harness {

struct ShiftSpec {
  double mean = 0.0;   // offset along e_1
  double scale = 1.0;  // standard-deviation multiplier
  double weight = 1.0; // probability of the shifted component
};

inline ShiftSpec shift_spec(const ShiftConfig& shift, double mu) {
  switch (shift.family) {
    case ShiftFamily::kMeanShift:
      return {mu, shift.covariance_scale, 1.0};
    case ShiftFamily::kCovarianceScale:
      return {0.0, shift.covariance_scale * (1.0 + mu), 1.0};
    case ShiftFamily::kMixture:
      return {mu, shift.covariance_scale, shift.mixture_weight};
  }
  return {};
}

/// Rescales each column to norm at most m_x.
inline void clip_columns(Matrix& tokens, double m_x) {
  for (Index j = 0; j < tokens.cols(); ++j) {
    const double norm = tokens.col(j).norm();
    if (norm > m_x) tokens.col(j) *= m_x / norm;
  }
}

/// n tokens (d x n). The mixture coin is drawn before the Gaussian for every
/// token, so the stream layout does not depend on the family.
inline Matrix sample_tokens(Index d, Index n, double m_x, const ShiftSpec& shift, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix out(d, n);
  for (Index j = 0; j < n; ++j) {
    const bool shifted = rng.uniform() < shift.weight;
    for (Index i = 0; i < d; ++i) out(i, j) = sd * rng.normal();
    if (shifted) {
      out.col(j) *= shift.scale;
      out(0, j) += shift.mean;
    }
  }
  clip_columns(out, m_x);
  return out;
}

inline Matrix target_tokens(Index d, Index n, double m_x, Rng& rng) {
  return sample_tokens(d, n, m_x, ShiftSpec{0.0, 1.0, 0.0}, rng);
}

/// Gaussian rows x cols matrix rescaled to Frobenius norm `cap`; cap = 0
/// keeps N(0, 1/cols) entries.
inline Matrix capped_gaussian(Index rows, Index cols, double cap, Rng& rng) {
  Matrix m = rng.normal_matrix(rows, cols);
  if (cap > 0.0) {
    m *= cap / m.norm();
  } else {
    m /= std::sqrt(static_cast<double>(cols));
  }
  return m;
}

/// Shift values whose prompt samples a suite needs.
inline std::vector<double> prompt_shifts(const ExperimentConfig& cfg) {
  switch (cfg.suite) {
    case Suite::kOffset: return cfg.shift.mu_grid;
    case Suite::kRiskgap: return {cfg.shift.mu_good, cfg.shift.mu_bad};
    case Suite::kRank: return {0.0, cfg.shift.mu_good, cfg.shift.mu_bad};
    default: return {};
  }
}

struct SyntheticTask {
  AttentionWeights weights;
  TokenMatrix tokens;
  FeatureMap map;
  DistributionSample target;                // empty unless the suite uses it
  std::vector<DistributionSample> prompts;  // one per prompt_shifts(cfg)
};

inline ShiftCaps declared_caps(const CapsConfig& caps) {
  return {caps.M_x, caps.M_phi, caps.M_V, caps.M_T};
}

/// Every component draws from its own stream derive_seed(seed, i), so adding
/// prompt samples never perturbs the weights or the context tokens.
inline SyntheticTask generate_synthetic_task(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Dims& dims = cfg.dims;
  const double m_x = cfg.caps.M_x;
  SyntheticTask task;

  Rng weights_rng(derive_seed(seed, 0));
  task.weights.wq = capped_gaussian(dims.k, dims.d, cfg.caps.wq_fro, weights_rng);
  task.weights.wk = capped_gaussian(dims.k, dims.d, cfg.caps.wk_fro, weights_rng);
  task.weights.wv = capped_gaussian(dims.m, dims.d, cfg.caps.wv_fro, weights_rng);
  task.weights.scale_by_sqrt_d = cfg.scale_by_sqrt_d;

  Rng token_rng(derive_seed(seed, 1));
  task.tokens.demos = target_tokens(dims.d, dims.N, m_x, token_rng);
  task.tokens.queries = target_tokens(dims.d, dims.M, m_x, token_rng);
  task.tokens.next_query = target_tokens(dims.d, 1, m_x, token_rng).col(0);

  FeatureMapSpec spec;
  spec.kind = cfg.map_kind;
  spec.input_dim = dims.k;
  spec.feature_dim = dims.r;
  spec.seed = cfg.map_seed;
  task.map = build_feature_map(spec);

  const std::vector<double> shifts = prompt_shifts(cfg);
  if (!shifts.empty()) {
    Rng target_rng(derive_seed(seed, 2));
    task.target = {SampleLabel::kTarget, target_tokens(dims.d, cfg.n_samples, m_x, target_rng),
                   declared_caps(cfg.caps)};
    for (std::size_t i = 0; i < shifts.size(); ++i) {
      Rng rng(derive_seed(seed, 3 + i));
      task.prompts.push_back({SampleLabel::kPrompt,
                              sample_tokens(dims.d, cfg.n_samples, m_x,
                                            shift_spec(cfg.shift, shifts[i]), rng),
                              declared_caps(cfg.caps)});
    }
  }
  return task;
}

}  // namespace icl_kd_lab::harness
