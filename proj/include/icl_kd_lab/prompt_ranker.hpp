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

// Demonstration-set ranking by MMD to a target query sample.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "icl_kd_lab/shift_analysis.hpp"

namespace icl_kd_lab {

struct CandidateSet {
  std::string id;
  Matrix tokens;  // d x n_c
};

struct RankingEntry {
  std::string id;
  double score = 0.0;
};

/// Constants for the adjacent-pair risk-gap bounds. M_phi is measured over the
/// target and every candidate and maxed with the declared value.
struct GapBoundConstants {
  double eta = 0.1;
  double teacher_cap = 1.0;  // M_T
  double feature_cap = 0.0;  // declared M_phi
};

struct RankingReport {
  std::vector<RankingEntry> entries;   // ascending score
  std::vector<double> adjacent_gap_bounds;  // bound between entries i and i+1
  std::uint64_t map_seed = 0;
  double eta = 0.0;
  double M_T = 0.0;
  double M_phi = 0.0;
};

namespace detail {

inline DistributionSample as_prompt_sample(const CandidateSet& c) {
  require(c.tokens.cols() >= 1, ErrorCode::kEmptyContext, "candidate '" + c.id + "' is empty");
  return {SampleLabel::kPrompt, c.tokens, {}};
}

}  // namespace detail

inline double score_prompt_set(const CandidateSet& candidate, const DistributionSample& target,
                               const FeatureMap& map, const Matrix& wk) {
  require(candidate.tokens.rows() == target.tokens.rows(), ErrorCode::kDimensionMismatch,
          "candidate '" + candidate.id + "' has a different token dim than the target");
  return mmd_embedding(detail::as_prompt_sample(candidate), target, map, wk);
}

/// Ascending by score, ties by id. Output does not depend on input order.
inline RankingReport rank_prompt_sets(const std::vector<CandidateSet>& candidates,
                                      const DistributionSample& target, const FeatureMap& map,
                                      const Matrix& wk, const GapBoundConstants& constants = {}) {
  require(!candidates.empty(), ErrorCode::kEmptySet, "no candidate sets to rank");
  RankingReport report;
  report.map_seed = map.spec().seed;
  report.eta = constants.eta;
  report.M_T = constants.teacher_cap;
  report.M_phi = std::max(constants.feature_cap,
                          key_features(map, wk, target.tokens).colwise().norm().maxCoeff());

  for (const auto& c : candidates) {
    report.entries.push_back({c.id, score_prompt_set(c, target, map, wk)});
    report.M_phi = std::max(report.M_phi,
                            key_features(map, wk, c.tokens).colwise().norm().maxCoeff());
  }
  std::sort(report.entries.begin(), report.entries.end(),
            [](const RankingEntry& a, const RankingEntry& b) {
              if (a.score != b.score) return a.score < b.score;
              return a.id < b.id;
            });
  for (std::size_t i = 0; i + 1 < report.entries.size(); ++i) {
    const double d = report.entries[i + 1].score - report.entries[i].score;
    report.adjacent_gap_bounds.push_back(
        risk_gap_exact_rhs(report.eta, report.M_T, report.M_phi, d));
  }
  return report;
}

struct GreedySelection {
  CandidateSet subset;
  std::vector<Index> indices;  // into the pool, ascending
  double mmd = 0.0;
  double forward_mmd = 0.0;  // plain forward selection, for comparison
  Index seed_index = 0;      // first token of the winning run
  int swaps = 0;             // swaps applied in the winning run
};

namespace detail {

struct SubsetSearch {
  const Matrix& tokens;
  const Matrix& phi;
  const Matrix& target_mean;

  Matrix term(Index j) const { return tokens.col(j) * phi.col(j).transpose(); }

  double distance(const Matrix& sum, Index count) const {
    return (sum / static_cast<double>(count) - target_mean).norm();
  }

  struct Run {
    std::vector<Index> indices;
    double mmd = 0.0;
    int swaps = 0;
  };

  /// Forward selection of k tokens starting from `first` (or from the best
  /// single token when first < 0), then optional swap refinement: apply the
  /// best strictly improving (selected, unselected) exchange until none is
  /// left. Ties go to the lowest index.
  Run run(Index k, Index first, bool refine) const {
    const Index n = tokens.cols();
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    Matrix running = Matrix::Zero(target_mean.rows(), target_mean.cols());
    Run out;
    for (Index round = 1; round <= k; ++round) {
      Index best = -1;
      double best_mmd = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        if (round == 1 && first >= 0 && j != first) continue;
        const double mmd = distance(running + term(j), round);
        if (mmd < best_mmd) {
          best_mmd = mmd;
          best = j;
        }
      }
      used[static_cast<std::size_t>(best)] = true;
      running += term(best);
      out.indices.push_back(best);
      out.mmd = best_mmd;
    }
    // Each accepted swap strictly lowers the MMD, so the loop terminates.
    while (refine && k < n) {
      std::size_t best_slot = 0;
      Index best_in = -1;
      double best_mmd = out.mmd;
      for (std::size_t slot = 0; slot < out.indices.size(); ++slot) {
        const Matrix without = running - term(out.indices[slot]);
        for (Index j = 0; j < n; ++j) {
          if (used[static_cast<std::size_t>(j)]) continue;
          const double mmd = distance(without + term(j), k);
          if (mmd < best_mmd) {
            best_mmd = mmd;
            best_slot = slot;
            best_in = j;
          }
        }
      }
      if (best_in < 0) break;
      const Index leaving = out.indices[best_slot];
      used[static_cast<std::size_t>(leaving)] = false;
      used[static_cast<std::size_t>(best_in)] = true;
      running += term(best_in) - term(leaving);
      out.indices[best_slot] = best_in;
      out.mmd = best_mmd;
      ++out.swaps;
    }
    std::sort(out.indices.begin(), out.indices.end());
    return out;
  }
};

}  // namespace detail

/// Seeded greedy selection of k pool tokens minimizing the MMD between the
/// subset and the target. One forward-selection run (with swap refinement)
/// starts from each pool token; the best run wins, ties to the lowest seed.
/// Costs O(k n^2) subset evaluations per run plus swaps, versus C(n, k) for
/// exhaustive search. For k <= 2 every pair is reachable from one of its
/// members, so the result is the exact optimum there.
inline GreedySelection greedy_select(const CandidateSet& pool, Index k,
                                     const DistributionSample& target, const FeatureMap& map,
                                     const Matrix& wk) {
  require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  require(k <= pool.tokens.cols(), ErrorCode::kKTooLarge,
          "k = " + std::to_string(k) + " exceeds pool size " +
              std::to_string(pool.tokens.cols()));
  require(pool.tokens.rows() == target.tokens.rows(), ErrorCode::kDimensionMismatch,
          "pool and target token dims differ");

  const Matrix target_mean = cross_moment(map, wk, target).matrix;
  const Matrix phi = key_features(map, wk, pool.tokens);
  const detail::SubsetSearch search{pool.tokens, phi, target_mean};

  GreedySelection out;
  out.forward_mmd = search.run(k, -1, false).mmd;
  out.mmd = std::numeric_limits<double>::infinity();
  for (Index first = 0; first < pool.tokens.cols(); ++first) {
    auto run = search.run(k, first, true);
    if (run.mmd < out.mmd) {
      out.mmd = run.mmd;
      out.indices = std::move(run.indices);
      out.seed_index = first;
      out.swaps = run.swaps;
    }
  }

  out.subset.id = pool.id + "/greedy-" + std::to_string(k);
  out.subset.tokens.resize(pool.tokens.rows(), k);
  for (Index i = 0; i < k; ++i) out.subset.tokens.col(i) = pool.tokens.col(out.indices[i]);
  return out;
}

}  // namespace icl_kd_lab
