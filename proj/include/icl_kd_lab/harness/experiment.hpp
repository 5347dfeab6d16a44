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

// Experiment orchestration. Trial t of an experiment with master seed s runs
// on seed derive_seed(s, t) and touches no shared state, so the bundle is
// identical for any --jobs value and any execution order.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

#include "icl_kd_lab/attention_duality.hpp"
#include "icl_kd_lab/generalization_bounds.hpp"
#include "icl_kd_lab/harness/config.hpp"
#include "icl_kd_lab/harness/report.hpp"
#include "icl_kd_lab/harness/synthetic.hpp"
#include "icl_kd_lab/implicit_distillation.hpp"
#include "icl_kd_lab/prompt_ranker.hpp"
#include "icl_kd_lab/shift_analysis.hpp"

namespace icl_kd_lab::harness {

/// Tolerances asserted by the sweeps.
inline constexpr double kLinearDualityTol = 1e-12;
inline constexpr double kSoftmaxDualityTol = 1e-11;
inline constexpr double kSplitTol = 1e-11;
inline constexpr double kW0IdentityTol = 1e-11;
inline constexpr double kGradientTol = 1e-5;
inline constexpr double kGreedyTol = 0.10;
inline constexpr double kRankMatchRate = 0.95;

/// Seeds for suite-level checks come from this stream, disjoint from trials.
inline constexpr std::uint64_t kDiagnosticStream = 0xd1a6'0000'0000'0000ULL;

struct TrialResult {
  json record;
  int violations = 0;
};

namespace detail {

inline Index draw_size(Rng& rng, Index lo, Index hi) {
  return static_cast<Index>(rng.uniform_int(lo, std::max(lo, hi)));
}

/// Config copy with dims drawn uniformly: d, k, m, N in [1, max], M in [0, max].
inline ExperimentConfig with_random_dims(ExperimentConfig cfg, Rng& rng) {
  cfg.dims.d = draw_size(rng, 1, cfg.dims.d);
  cfg.dims.k = draw_size(rng, 1, cfg.dims.k);
  cfg.dims.m = draw_size(rng, 1, cfg.dims.m);
  cfg.dims.N = draw_size(rng, 1, cfg.dims.N);
  cfg.dims.M = draw_size(rng, 0, cfg.dims.M);
  return cfg;
}

inline json dims_json(const Dims& d) {
  return {{"d", d.d}, {"k", d.k}, {"m", d.m}, {"N", d.N}, {"M", d.M}, {"r", d.r}};
}

inline double central_difference_error(const StudentModel& s, const TeacherModel& t,
                                       const Matrix& samples) {
  const Matrix grad = kd_gradient(s, t, samples);
  Matrix numeric(grad.rows(), grad.cols());
  StudentModel probe = s;
  for (Index j = 0; j < grad.cols(); ++j) {
    for (Index i = 0; i < grad.rows(); ++i) {
      const double w = s.w(i, j);
      const double h = 1e-6 * std::max(1.0, std::abs(w));
      probe.w(i, j) = w + h;
      const double up = kd_loss(probe, t, samples);
      probe.w(i, j) = w - h;
      const double down = kd_loss(probe, t, samples);
      probe.w(i, j) = w;
      numeric(i, j) = (up - down) / (2.0 * h);
    }
  }
  return (numeric - grad).norm() / std::max(grad.norm(), 1e-300);
}

}  // namespace detail

/// Duality checks on random sizes: one-step linear GD against W_0 x + LA over
/// the full N + M context, softmax attention against its kernel dual, and the
/// demonstration/query split.
inline TrialResult duality_trial(const ExperimentConfig& base, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 100));
  ExperimentConfig cfg = detail::with_random_dims(base, rng);
  cfg.map_kind = FeatureMapKind::kExactKernel;
  const SyntheticTask task = generate_synthetic_task(cfg, seed);
  const Index d = cfg.dims.d;
  const Index m = cfg.dims.m;
  const Index n_linear = cfg.dims.N + cfg.dims.M;

  const Matrix w0 = rng.normal_matrix(m, d);
  const Matrix inputs = task.tokens.sequence();
  const Matrix targets = rng.normal_matrix(m, n_linear);
  const double eta = 0.01 + rng.uniform();
  const Vector& x = task.tokens.next_query;
  const Vector gd = one_step_linear_gd(w0, inputs, targets, eta, x);
  const Vector la = w0 * x + linear_attention(linear_gd_signals(w0, inputs, targets, eta),
                                              inputs, x);
  const double linear_diff = (gd - la).cwiseAbs().maxCoeff();

  const Vector attention = softmax_attention(task.weights, task.tokens);
  const double softmax_rel =
      relative_max_diff(dual_gd_prediction(task.weights, task.tokens, task.map), attention);
  const DualityReport split = split_demo_query(task.weights, task.tokens);
  const double split_rel = relative_max_diff(split.w0_term + split.gradient_term, attention);

  TrialResult out;
  out.record = {{"dims", detail::dims_json(cfg.dims)},
                {"linear_max_abs_diff", linear_diff},
                {"softmax_rel_diff", softmax_rel},
                {"split_rel_diff", split_rel},
                {"max_abs_diff", split.max_abs_diff},
                {"partition_value", split.partition_value},
                {"linear_violated", linear_diff > kLinearDualityTol},
                {"softmax_violated", softmax_rel > kSoftmaxDualityTol},
                {"split_violated", split_rel > kSplitTol}};
  out.violations = int{linear_diff > kLinearDualityTol} + int{softmax_rel > kSoftmaxDualityTol} +
                   int{split_rel > kSplitTol};
  return out;
}

/// Demonstration block of the attention split against one-step distillation
/// with eta* = N / (2 D'), plus a finite-difference check of the KD gradient.
/// Even trials use the identity map, odd trials positive_random with
/// r drawn in [1, dims.r].
inline TrialResult kd_init_trial(const ExperimentConfig& base, std::uint64_t seed,
                                 std::size_t index) {
  Rng rng(derive_seed(seed, 100));
  ExperimentConfig cfg = detail::with_random_dims(base, rng);
  cfg.dims.r = detail::draw_size(rng, 1, base.dims.r);
  cfg.map_kind = index % 2 == 0 ? FeatureMapKind::kIdentity : FeatureMapKind::kPositiveRandom;
  cfg.map_seed = derive_seed(seed, 101);
  const SyntheticTask task = generate_synthetic_task(cfg, seed);

  const EtaStarPolicy policy = base.eta.policy == EtaConfig::Policy::kMatched
                                   ? EtaStarPolicy::matched()
                                   : EtaStarPolicy::fixed(base.eta.value);
  const DistillResult identity = check_w0_identity(task.weights, task.tokens, task.map, policy);
  const double w0_norm = identity.matched_w0->norm();
  const double rel_gap = identity.identity_gap / std::max(w0_norm, 1e-300);

  StudentModel student{rng.normal_matrix(cfg.dims.m, task.map.feature_dim()), task.weights.wk,
                       task.map, std::nullopt};
  const double grad_err = detail::central_difference_error(
      student, TeacherModel{task.weights.wv}, task.tokens.demos);

  TrialResult out;
  out.record = {{"dims", detail::dims_json(cfg.dims)},
                {"map", to_string(task.map.kind())},
                {"eta_star", identity.eta_star},
                {"partition_value", identity.partition_value},
                {"w0_norm", w0_norm},
                {"identity_rel_gap", rel_gap},
                {"gradient_rel_err", grad_err},
                {"identity_violated", rel_gap > kW0IdentityTol},
                {"gradient_violated", grad_err > kGradientTol}};
  out.violations = int{rel_gap > kW0IdentityTol} + int{grad_err > kGradientTol};
  return out;
}

inline NormBudget declared_budget(const CapsConfig& caps) {
  NormBudget b;
  b.B = caps.B;
  b.C = caps.C;
  b.D_T = caps.D_T;
  return b;
}

/// One (task, W) draw against the generalization bound, with the true risk
/// estimated on a held-out set holdout_factor times the training size. Even
/// trials draw W uniformly in radius inside the budget ball; odd trials use
/// the one-step distilled weights at the safe step, projected into the ball.
inline TrialResult genbound_trial(const ExperimentConfig& base, std::uint64_t seed,
                                  std::size_t index) {
  ExperimentConfig cfg = base;
  cfg.map_seed = derive_seed(seed, 101);
  const SyntheticTask task = generate_synthetic_task(cfg, seed);
  Rng rng(derive_seed(seed, 100));
  const Matrix train = target_tokens(cfg.dims.d, cfg.dims.N, cfg.caps.M_x, rng);
  const Matrix holdout =
      target_tokens(cfg.dims.d, cfg.dims.N * cfg.holdout_factor, cfg.caps.M_x, rng);
  const TeacherModel teacher{task.weights.wv, cfg.caps.D_T};
  const double B = cfg.caps.B;

  Matrix w;
  if (index % 2 == 0) {
    w = rng.normal_matrix(cfg.dims.m, task.map.feature_dim());
    w *= B * rng.uniform() / std::max(w.norm(), 1e-300);
  } else {
    const double eta = safe_distill_step(task.map, task.weights.wk, train);
    w = icl_kd_lab::detail::project_to_ball(
        distill_one_step(teacher, task.weights.wk, task.map, train, eta).w_star, B);
  }
  const StudentModel student{w, task.weights.wk, task.map, B};
  const BoundReport r = check_generalization_bound(student, teacher, train, holdout,
                                                   declared_budget(cfg.caps), cfg.delta);
  TrialResult out;
  out.record = {{"w_source", index % 2 == 0 ? "random" : "distilled"},
                {"w_norm", w.norm()},
                {"n", r.n},
                {"lhs", r.lhs},
                {"rhs", r.rhs},
                {"empirical_risk", r.empirical_risk},
                {"complexity_term", r.complexity_term},
                {"tail_term", r.tail_term},
                {"delta", r.delta},
                {"violated", r.violated}};
  out.violations = int{r.violated};
  return out;
}

/// Mu-grid point index / repeats: trial t uses grid point t / repeats.
inline TrialResult offset_trial(const ExperimentConfig& base, std::uint64_t seed,
                                std::size_t index) {
  ExperimentConfig cfg = base;
  const double mu = base.shift.mu_grid[index / static_cast<std::size_t>(base.repeats)];
  cfg.shift.mu_grid = {mu};
  const SyntheticTask task = generate_synthetic_task(cfg, seed);
  const OffsetReport r =
      offset_bound_check(task.target, task.prompts[0], task.weights.wv, task.weights.wk,
                         task.map, cfg.eta.value, RidgeConfig{cfg.ridge});
  TrialResult out;
  out.record = {{"mu", mu},
                {"repeat", index % static_cast<std::size_t>(base.repeats)},
                {"delta_w_norm", r.delta_w_norm},
                {"std_err", r.std_err},
                {"mmd", r.mmd},
                {"eta", r.eta},
                {"M_x", r.M_x},
                {"M_phi", r.M_phi},
                {"M_V", r.M_V},
                {"inv_sigma_norm", r.inv_sigma_norm},
                {"eta_minus_inv_sigma", r.eta_minus_inv_sigma},
                {"min_eig", r.min_eig},
                {"first_term_bound", r.first_term_bound},
                {"bound_plain", r.bound_plain},
                {"bound_whitened", r.bound_whitened},
                {"violated_plain", r.violated_plain},
                {"violated_whitened", r.violated_whitened}};
  // The whitened form assumes Sigma_phi = I and is reported, not asserted.
  out.violations = int{r.violated_plain};
  return out;
}

inline TrialResult riskgap_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
  const SyntheticTask task = generate_synthetic_task(cfg, seed);
  RiskGapReport r = risk_gap_check(task.target, task.prompts[0], task.prompts[1],
                                   task.weights.wv, task.weights.wk, task.map, cfg.eta.value);
  if (r.step_condition) {
    r = risk_gap_check(task.target, task.prompts[0], task.prompts[1], task.weights.wv,
                       task.weights.wk, task.map, cfg.eta.value, RiskGapForm::kWithMain);
  }
  TrialResult out;
  out.record = {{"mmd_good", r.mmd_good},
                {"mmd_bad", r.mmd_bad},
                {"delta_mmd", r.delta_mmd},
                {"risk_good", r.risk_good},
                {"risk_bad", r.risk_bad},
                {"lhs", r.lhs},
                {"std_err", r.std_err},
                {"eta", r.eta},
                {"M_T", r.M_T},
                {"M_phi", r.M_phi},
                {"rhs_exact", r.rhs_exact},
                {"rhs_main", r.rhs_main ? json(*r.rhs_main) : json(nullptr)},
                {"step_condition", r.step_condition},
                {"swapped", r.swapped},
                {"violated_exact", r.violated_exact},
                {"violated_main", r.violated_main}};
  out.violations = int{r.violated_exact} + int{r.violated_main};
  return out;
}

/// Exhaustive minimum of the subset MMD over all k-subsets of the pool.
inline double exhaustive_subset_mmd(const Matrix& pool, Index k, const DistributionSample& target,
                                    const FeatureMap& map, const Matrix& wk) {
  const Matrix target_mean = cross_moment(map, wk, target).matrix;
  const Matrix phi = key_features(map, wk, pool);
  const Index n = pool.cols();
  std::vector<bool> pick(static_cast<std::size_t>(n), false);
  std::fill(pick.begin(), pick.begin() + k, true);
  double best = std::numeric_limits<double>::infinity();
  do {
    Matrix mean = Matrix::Zero(target_mean.rows(), target_mean.cols());
    for (Index j = 0; j < n; ++j)
      if (pick[static_cast<std::size_t>(j)]) mean += pool.col(j) * phi.col(j).transpose();
    best = std::min(best, (mean / static_cast<double>(k) - target_mean).norm());
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

/// Ranks {identical, mild, severe} prompt samples against the target and
/// compares greedy selection with the exhaustive optimum on a small pool
/// drawn from the mild prompt distribution.
inline TrialResult rank_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
  const SyntheticTask task = generate_synthetic_task(cfg, seed);
  const std::vector<CandidateSet> candidates{{"identical", task.prompts[0].tokens},
                                             {"mild", task.prompts[1].tokens},
                                             {"severe", task.prompts[2].tokens}};
  GapBoundConstants constants;
  constants.eta = cfg.eta.value;
  constants.teacher_cap = std::max(
      cfg.caps.M_T, (task.weights.wv * task.target.tokens).colwise().norm().maxCoeff());
  constants.feature_cap = cfg.caps.M_phi;
  const RankingReport ranking =
      rank_prompt_sets(candidates, task.target, task.map, task.weights.wk, constants);
  const bool order_ok = ranking.entries[0].id == "identical" &&
                        ranking.entries[1].id == "mild" && ranking.entries[2].id == "severe";

  const CandidateSet pool{"pool", task.prompts[1].tokens.leftCols(cfg.pool_size)};
  const GreedySelection greedy =
      greedy_select(pool, cfg.greedy_k, task.target, task.map, task.weights.wk);
  const double optimum =
      exhaustive_subset_mmd(pool.tokens, cfg.greedy_k, task.target, task.map, task.weights.wk);
  const bool greedy_ok = greedy.mmd <= (1.0 + kGreedyTol) * optimum;

  TrialResult out;
  out.record = {{"order", json::array({ranking.entries[0].id, ranking.entries[1].id,
                                       ranking.entries[2].id})},
                {"order_matches", order_ok},
                {"greedy_mmd", greedy.mmd},
                {"forward_mmd", greedy.forward_mmd},
                {"greedy_swaps", greedy.swaps},
                {"exhaustive_mmd", optimum},
                {"greedy_within_tolerance", greedy_ok},
                {"map_seed", ranking.map_seed}};
  for (const auto& e : ranking.entries) out.record["score_" + e.id] = e.score;
  out.violations = int{!greedy_ok};
  return out;
}

inline std::size_t trial_count(const ExperimentConfig& cfg) {
  switch (cfg.suite) {
    case Suite::kOffset:
      return cfg.shift.mu_grid.size() * static_cast<std::size_t>(cfg.repeats);
    case Suite::kRiskgap:
    case Suite::kRank:
      return static_cast<std::size_t>(cfg.repeats);
    default:
      return static_cast<std::size_t>(cfg.trials);
  }
}

inline TrialResult run_trial(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t index) {
  switch (cfg.suite) {
    case Suite::kDuality: return duality_trial(cfg, seed);
    case Suite::kKdInit: return kd_init_trial(cfg, seed, index);
    case Suite::kGenbound: return genbound_trial(cfg, seed, index);
    case Suite::kOffset: return offset_trial(cfg, seed, index);
    case Suite::kRiskgap: return riskgap_trial(cfg, seed);
    case Suite::kRank: return rank_trial(cfg, seed);
  }
  return {};
}

/// Linear-class Rademacher estimates on the n_grid, the contraction check
/// (repeats instances), and the sup-gap tail summary.
inline TrialResult genbound_diagnostics(const ExperimentConfig& cfg) {
  const std::uint64_t stream = derive_seed(cfg.seed, kDiagnosticStream);
  TrialResult out;
  out.record = json::object();

  json linear = json::array();
  for (std::size_t i = 0; i < cfg.n_grid.size(); ++i) {
    const std::uint64_t seed = derive_seed(stream, i);
    ExperimentConfig task_cfg = cfg;
    task_cfg.map_seed = derive_seed(seed, 101);
    const SyntheticTask task = generate_synthetic_task(task_cfg, seed);
    Rng rng(derive_seed(seed, 100));
    const Matrix x = target_tokens(cfg.dims.d, cfg.n_grid[i], cfg.caps.M_x, rng);
    const auto est = estimate_rademacher_linear(key_features(task.map, task.weights.wk, x),
                                                cfg.caps.B, cfg.rademacher_draws,
                                                derive_seed(seed, 102));
    linear.push_back({{"n", cfg.n_grid[i]}, {"estimate", est.estimate},
                      {"std_err", est.std_err}, {"feature_cap", est.feature_cap},
                      {"bound", est.bound}, {"violated", est.violated}});
    out.violations += int{est.violated};
  }
  out.record["rademacher_linear"] = linear;

  json contraction = json::array();
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    const std::uint64_t seed = derive_seed(stream, 1000 + static_cast<std::uint64_t>(rep));
    ExperimentConfig task_cfg = cfg;
    task_cfg.map_seed = derive_seed(seed, 101);
    const SyntheticTask task = generate_synthetic_task(task_cfg, seed);
    Rng rng(derive_seed(seed, 100));
    const Matrix x = target_tokens(cfg.dims.d, cfg.dims.N, cfg.caps.M_x, rng);
    const auto est = estimate_rademacher_loss_class(
        task.weights.wk, task.map, TeacherModel{task.weights.wv, cfg.caps.D_T}, x, cfg.caps.B,
        cfg.loss_class_draws, cfg.ascent_steps, derive_seed(seed, 102));
    contraction.push_back({{"lower_estimate", est.lower_estimate},
                           {"std_err", est.std_err},
                           {"linear_estimate", est.linear.estimate},
                           {"lipschitz", est.lipschitz},
                           {"contraction_rhs", est.contraction_rhs},
                           {"combined_std_err", est.combined_std_err},
                           {"violated", est.violated}});
    out.violations += int{est.violated};
  }
  out.record["contraction"] = contraction;

  const std::uint64_t seed = derive_seed(stream, 2000);
  ExperimentConfig task_cfg = cfg;
  task_cfg.map_seed = derive_seed(seed, 101);
  const SyntheticTask task = generate_synthetic_task(task_cfg, seed);
  SupGapTask sup;
  sup.wv = task.weights.wv;
  sup.wk = task.weights.wk;
  sup.map = task.map;
  sup.B = cfg.caps.B;
  sup.n = cfg.dims.N;
  sup.holdout_factor = cfg.holdout_factor;
  sup.delta = cfg.delta;
  sup.ascent_steps = cfg.ascent_steps;
  sup.declared = declared_budget(cfg.caps);
  const Index d = cfg.dims.d;
  const double m_x = cfg.caps.M_x;
  sup.sampler = [d, m_x](Index n, Rng& rng) { return target_tokens(d, n, m_x, rng); };
  const SupGapSummary gap = estimate_sup_gap(sup, cfg.resamples, derive_seed(seed, 102));
  const bool exceeded = gap.exceedance_fraction > cfg.delta;
  out.record["sup_gap"] = {{"mean", gap.mean}, {"q05", gap.q05}, {"median", gap.median},
                           {"q95", gap.q95}, {"t", gap.t},
                           {"exceedance_fraction", gap.exceedance_fraction},
                           {"resamples", cfg.resamples}, {"violated", exceeded}};
  out.violations += int{exceeded};
  return out;
}

struct RunOptions {
  int jobs = 1;
  bool record_wall_clock = true;
};

/// Runs every trial of cfg. A trial that throws is recorded with its error
/// and counted in `errors`; it does not abort the run.
inline ReportBundle run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = trial_count(cfg);

  ReportBundle bundle;
  bundle.suite = std::string(to_string(cfg.suite));
  bundle.config = config_to_json(cfg);
  bundle.master_seed = cfg.seed;
  bundle.trial_seeds.resize(n);
  for (std::size_t t = 0; t < n; ++t) bundle.trial_seeds[t] = derive_seed(cfg.seed, t);

  std::vector<TrialResult> results(n);
  std::vector<bool> failed(n, false);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < n; t = next++) {
      try {
        results[t] = run_trial(cfg, bundle.trial_seeds[t], t);
      } catch (const Error& e) {
        results[t].record = {{"error", error_code_name(e.code())}, {"message", e.what()}};
        failed[t] = true;
      } catch (const std::exception& e) {
        results[t].record = {{"error", "Unexpected"}, {"message", e.what()}};
        failed[t] = true;
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (std::size_t t = 0; t < n; ++t) {
    json record = std::move(results[t].record);
    record["trial"] = t;
    record["seed"] = bundle.trial_seeds[t];
    bundle.records.push_back(std::move(record));
    bundle.violations += results[t].violations;
    bundle.errors += int{failed[t]};
  }

  if (cfg.suite == Suite::kGenbound) {
    try {
      TrialResult diag = genbound_diagnostics(cfg);
      bundle.diagnostics = std::move(diag.record);
      bundle.violations += diag.violations;
    } catch (const Error& e) {
      bundle.diagnostics = {{"error", error_code_name(e.code())}, {"message", e.what()}};
      ++bundle.errors;
    }
  }
  if (cfg.suite == Suite::kRank && n > 0) {
    std::size_t matches = 0;
    for (const auto& r : bundle.records)
      matches += r.contains("order_matches") && r.at("order_matches").get<bool>();
    const double rate = static_cast<double>(matches) / static_cast<double>(n);
    const bool ok = rate >= kRankMatchRate;
    bundle.diagnostics = {{"order_matches", matches}, {"order_match_rate", rate},
                          {"required_rate", kRankMatchRate}, {"violated", !ok}};
    bundle.violations += int{!ok};
  }

  if (options.record_wall_clock) {
    bundle.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return bundle;
}

}  // namespace icl_kd_lab::harness
