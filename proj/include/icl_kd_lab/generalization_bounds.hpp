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

// Generalization of the implicitly distilled student.
//
// With |f_T(x)| <= D_T, |W|_F <= B and |phi(W^K x)| <= C, the KD risk obeys,
// with probability >= 1 - delta over N demonstrations,
//
//   L(W) <= L_hat(W) + 4 B C (D_T + B C) / sqrt(N)
//                    + 3 (D_T + B C)^2 sqrt(log(2 / delta) / (2 N)).
//
// Suprema over the Frobenius ball are estimated by projected gradient ascent.
// Any point in the ball gives a value below the true supremum, so every
// estimate here is a lower estimate and inequality checks against upper
// bounds stay sound.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "icl_kd_lab/implicit_distillation.hpp"
#include "icl_kd_lab/matrix_core.hpp"
#include "icl_kd_lab/random.hpp"

namespace icl_kd_lab {

struct NormBudget {
  double B = 0.0;    // |W|_F cap
  double C = 0.0;    // |phi(W^K x)| cap
  double D_T = 0.0;  // |f_T(x)| cap
  bool B_measured = false;
  bool C_measured = false;
  bool D_T_measured = false;

  double radius() const { return D_T + B * C; }
};

/// C and D_T become max(declared, sample maximum); B stays declared unless the
/// given student weights exceed it.
inline NormBudget measure_budget(const NormBudget& declared, const FeatureMap& map,
                                 const Matrix& wk, const TeacherModel& teacher,
                                 const Matrix& samples, const Matrix* student_w = nullptr) {
  NormBudget out = declared;
  if (samples.cols() > 0) {
    const double c = key_features(map, wk, samples).colwise().norm().maxCoeff();
    const double dt = (teacher.wv * samples).colwise().norm().maxCoeff();
    if (c > out.C) {
      out.C = c;
      out.C_measured = true;
    }
    if (dt > out.D_T) {
      out.D_T = dt;
      out.D_T_measured = true;
    }
  }
  if (teacher.declared_cap > out.D_T) {
    out.D_T = teacher.declared_cap;
    out.D_T_measured = false;
  }
  if (student_w != nullptr && student_w->norm() > out.B) {
    out.B = student_w->norm();
    out.B_measured = true;
  }
  return out;
}

struct BoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double empirical_risk = 0.0;
  double complexity_term = 0.0;
  double tail_term = 0.0;
  double delta = 0.05;
  Index n = 0;
  bool violated = false;
};

inline BoundReport generalization_bound_rhs(double empirical, const NormBudget& budget, Index n,
                                            double delta) {
  require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidDelta, "delta must lie in (0, 1)");
  require(n >= 1, ErrorCode::kInvalidArgument, "n must be >= 1");
  require(budget.B >= 0.0 && budget.C >= 0.0 && budget.D_T >= 0.0,
          ErrorCode::kInvalidArgument, "norm caps must be nonnegative");
  const double nn = static_cast<double>(n);
  const double r = budget.radius();
  BoundReport report;
  report.empirical_risk = empirical;
  report.complexity_term = 4.0 * budget.B * budget.C * r / std::sqrt(nn);
  report.tail_term = 3.0 * r * r * std::sqrt(std::log(2.0 / delta) / (2.0 * nn));
  report.rhs = report.empirical_risk + report.complexity_term + report.tail_term;
  report.delta = delta;
  report.n = n;
  return report;
}

inline BoundReport with_lhs(BoundReport report, double lhs) {
  report.lhs = lhs;
  report.violated = lhs > report.rhs;
  return report;
}

inline double empirical_risk(const StudentModel& s, const TeacherModel& t, const Matrix& samples) {
  return kd_loss(s, t, samples);
}

/// L(W) on a held-out set against the bound built from the training set.
/// Caps are measured over both sets so they dominate every point involved.
inline BoundReport check_generalization_bound(const StudentModel& s, const TeacherModel& t,
                                              const Matrix& train, const Matrix& holdout,
                                              const NormBudget& declared, double delta) {
  Matrix both(train.rows(), train.cols() + holdout.cols());
  both << train, holdout;
  const NormBudget budget = measure_budget(declared, s.map, s.wk, t, both, &s.w);
  const BoundReport rhs = generalization_bound_rhs(empirical_risk(s, t, train), budget,
                                                   train.cols(), delta);
  return with_lhs(rhs, kd_loss(s, t, holdout));
}

struct MonteCarloEstimate {
  double estimate = 0.0;
  double std_err = 0.0;
};

namespace detail {

inline MonteCarloEstimate summarize(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double var = values.size() > 1 ? ss / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

inline Vector rademacher_signs(std::uint64_t seed, std::uint64_t draw, Index n) {
  Rng rng(derive_seed(seed, draw));
  Vector sigma(n);
  for (Index i = 0; i < n; ++i) sigma(i) = rng.sign();
  return sigma;
}

inline Matrix project_to_ball(Matrix w, double radius) {
  const double norm = w.norm();
  if (norm > radius) w *= (radius > 0.0 ? radius / norm : 0.0);
  return w;
}

}  // namespace detail

/// Maximizes g(W) = c - 2 <W, P> + <W S, W> over |W|_F <= radius by projected
/// gradient ascent with normalized steps of 0.1 * radius. Two starts are
/// tried: the maximizer of the linear part, and the top eigendirection of S.
/// Returns the best value seen, a lower estimate of the supremum.
inline double maximize_quadratic_on_ball(double c, const Matrix& p, const Matrix& s,
                                         double radius, int steps) {
  auto value = [&](const Matrix& w) { return c - 2.0 * (w.array() * p.array()).sum() +
                                             (w * s).cwiseProduct(w).sum(); };
  double best = c;  // W = 0
  if (radius <= 0.0) return best;

  std::vector<Matrix> starts;
  const double p_norm = p.norm();
  if (p_norm > 0.0) starts.push_back(-radius * p / p_norm);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
  const Index top = s.rows() - 1;
  if (top >= 0 && eig.eigenvalues()(top) > 0.0) {
    const Vector u = eig.eigenvectors().col(top);
    Vector a = -(p * u);
    if (a.norm() == 0.0) a = Vector::Unit(p.rows(), 0);
    starts.push_back(radius * a.normalized() * u.transpose());
  }

  const double step = 0.1 * radius;
  for (Matrix w : starts) {
    best = std::max(best, value(w));
    for (int it = 0; it < steps; ++it) {
      const Matrix grad = 2.0 * (w * s - p);
      const double gnorm = grad.norm();
      if (gnorm == 0.0) break;
      w = detail::project_to_ball(w + step * grad / gnorm, radius);
      best = std::max(best, value(w));
    }
  }
  return best;
}

struct RademacherLinearEstimate : MonteCarloEstimate {
  double feature_cap = 0.0;  // measured max_i |phi_i|
  double bound = 0.0;        // B C / sqrt(N)
  bool violated = false;     // estimate > bound + 3 std_err
};

/// (B/N) E_sigma |sum_i sigma_i phi_i|, the dual form of the Rademacher
/// complexity of {W phi : |W|_F <= B}. Draw t uses signs from
/// derive_seed(seed, t).
inline RademacherLinearEstimate estimate_rademacher_linear(const Matrix& features, double B,
                                                           int n_draws, std::uint64_t seed) {
  require(n_draws >= 100, ErrorCode::kTooFewDraws, "need at least 100 sign draws");
  require(features.cols() >= 1, ErrorCode::kEmptyContext, "need at least one feature column");
  const Index n = features.cols();
  std::vector<double> values(static_cast<std::size_t>(n_draws));
  for (int t = 0; t < n_draws; ++t) {
    const Vector sigma = detail::rademacher_signs(seed, static_cast<std::uint64_t>(t), n);
    values[static_cast<std::size_t>(t)] = B * (features * sigma).norm() / static_cast<double>(n);
  }
  RademacherLinearEstimate out;
  static_cast<MonteCarloEstimate&>(out) = detail::summarize(values);
  out.feature_cap = features.colwise().norm().maxCoeff();
  out.bound = B * out.feature_cap / std::sqrt(static_cast<double>(n));
  out.violated = out.estimate > out.bound + 3.0 * out.std_err;
  return out;
}

struct LossClassEstimate {
  double lower_estimate = 0.0;
  double std_err = 0.0;
  RademacherLinearEstimate linear;
  double lipschitz = 0.0;        // 2 (D_T + B C)
  double contraction_rhs = 0.0;  // lipschitz * linear.estimate
  double combined_std_err = 0.0;
  bool violated = false;
};

/// E_sigma sup_{|W|_F <= B} (1/N) sum_i sigma_i |f_T(x_i) - W phi_i|^2,
/// compared with the contraction bound 2 (D_T + B C) times the linear-class
/// dual estimate computed from the same sign draws.
inline LossClassEstimate estimate_rademacher_loss_class(const Matrix& wk, const FeatureMap& map,
                                                        const TeacherModel& teacher,
                                                        const Matrix& samples, double B,
                                                        int n_draws, int ascent_steps,
                                                        std::uint64_t seed) {
  require(n_draws >= 100, ErrorCode::kTooFewDraws, "need at least 100 sign draws");
  require(ascent_steps >= 1, ErrorCode::kInvalidArgument, "ascent_steps must be >= 1");
  require(B >= 0.0, ErrorCode::kInvalidArgument, "B must be >= 0");
  require(samples.cols() >= 1, ErrorCode::kEmptyContext, "need at least one sample");
  const Matrix phi = key_features(map, wk, samples);
  const Matrix targets = teacher.wv * samples;
  const Index n = samples.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Vector target_sq = targets.colwise().squaredNorm().transpose();

  std::vector<double> values(static_cast<std::size_t>(n_draws));
  for (int t = 0; t < n_draws; ++t) {
    const Vector sigma = detail::rademacher_signs(seed, static_cast<std::uint64_t>(t), n);
    const double c = inv_n * sigma.dot(target_sq);
    const Matrix p = inv_n * targets * sigma.asDiagonal() * phi.transpose();
    const Matrix s = inv_n * phi * sigma.asDiagonal() * phi.transpose();
    values[static_cast<std::size_t>(t)] = maximize_quadratic_on_ball(c, p, s, B, ascent_steps);
  }
  const MonteCarloEstimate composed = detail::summarize(values);

  LossClassEstimate out;
  out.lower_estimate = composed.estimate;
  out.std_err = composed.std_err;
  out.linear = estimate_rademacher_linear(phi, B, n_draws, seed);
  NormBudget caps;
  caps.B = B;
  caps = measure_budget(caps, map, wk, teacher, samples);
  out.lipschitz = 2.0 * caps.radius();
  out.contraction_rhs = out.lipschitz * out.linear.estimate;
  out.combined_std_err = std::hypot(out.std_err, out.lipschitz * out.linear.std_err);
  out.violated = out.lower_estimate > out.contraction_rhs + 3.0 * out.combined_std_err;
  return out;
}

/// Draws n tokens (d x n) from the task distribution.
using TokenSampler = std::function<Matrix(Index n, Rng& rng)>;

struct SupGapTask {
  Matrix wv;
  Matrix wk;
  FeatureMap map;
  double B = 1.0;
  Index n = 64;
  Index holdout_factor = 50;
  TokenSampler sampler;
  double delta = 0.05;
  int ascent_steps = 50;
  /// Test hook: evaluate L on the training set itself (Phi becomes 0).
  bool holdout_is_train = false;
  NormBudget declared;
};

struct SupGapSummary {
  std::vector<double> phis;
  double mean = 0.0;
  double q05 = 0.0;
  double median = 0.0;
  double q95 = 0.0;
  double t = 0.0;  // 3 R^2 sqrt(log(2/delta) / (2n))
  double exceedance_fraction = 0.0;
  NormBudget budget;
};

namespace detail {

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Phi(X_D) = sup_{|W|_F <= B} (L(W) - L_hat(W)) over fresh demonstration
/// sets, with L from a held-out set holdout_factor times larger. Reports how
/// often Phi exceeds its mean by the McDiarmid deviation t.
inline SupGapSummary estimate_sup_gap(const SupGapTask& task, int n_resamples, std::uint64_t seed) {
  require(n_resamples >= 30, ErrorCode::kTooFewResamples, "need at least 30 resamples");
  require(static_cast<bool>(task.sampler), ErrorCode::kInvalidArgument, "task has no sampler");
  require(task.n >= 1 && task.holdout_factor >= 1, ErrorCode::kInvalidArgument,
          "sample sizes must be >= 1");
  require(task.delta > 0.0 && task.delta < 1.0, ErrorCode::kInvalidDelta,
          "delta must lie in (0, 1)");

  const TeacherModel teacher{task.wv};
  SupGapSummary out;
  out.budget = task.declared;
  out.budget.B = std::max(out.budget.B, task.B);

  // Second-order moments: L(W) = c - 2 <W, P> + <W S, W>.
  struct Moments {
    double c;
    Matrix p;
    Matrix s;
  };
  auto moments = [&](const Matrix& x) {
    const Matrix phi = key_features(task.map, task.wk, x);
    const Matrix y = task.wv * x;
    const double inv = 1.0 / static_cast<double>(x.cols());
    return Moments{inv * y.squaredNorm(), inv * y * phi.transpose(), inv * phi * phi.transpose()};
  };

  for (int r = 0; r < n_resamples; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    const Matrix train = task.sampler(task.n, rng);
    const Matrix holdout = task.holdout_is_train ? train
                                                 : task.sampler(task.n * task.holdout_factor, rng);
    const Moments mt = moments(train);
    const Moments mh = moments(holdout);
    out.phis.push_back(maximize_quadratic_on_ball(mh.c - mt.c, mh.p - mt.p, mh.s - mt.s, task.B,
                                                  task.ascent_steps));
    out.budget = measure_budget(out.budget, task.map, task.wk, teacher, train);
    out.budget = measure_budget(out.budget, task.map, task.wk, teacher, holdout);
  }

  const double r = out.budget.radius();
  out.t = 3.0 * r * r * std::sqrt(std::log(2.0 / task.delta) / (2.0 * static_cast<double>(task.n)));
  out.mean = detail::summarize(out.phis).estimate;
  out.q05 = detail::quantile(out.phis, 0.05);
  out.median = detail::quantile(out.phis, 0.5);
  out.q95 = detail::quantile(out.phis, 0.95);
  const auto exceed = std::count_if(out.phis.begin(), out.phis.end(),
                                    [&](double v) { return v >= out.mean + out.t; });
  out.exceedance_fraction = static_cast<double>(exceed) / static_cast<double>(out.phis.size());
  return out;
}

}  // namespace icl_kd_lab
