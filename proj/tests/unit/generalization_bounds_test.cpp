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

#include <cmath>

#include <gtest/gtest.h>

#include "icl_kd_lab/generalization_bounds.hpp"
#include "icl_kd_lab/random.hpp"

namespace icl_kd_lab {
namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kInvalidArgument;
}

FeatureMap identity_map(Index k) { return build_feature_map({FeatureMapKind::kIdentity, k, 0, 0}); }

FeatureMap random_map(Index k, Index r, std::uint64_t seed) {
  return build_feature_map({FeatureMapKind::kPositiveRandom, k, r, seed});
}

Matrix unit_ball_tokens(Rng& rng, Index d, Index n) {
  Matrix x = rng.normal_matrix(d, n) / std::sqrt(static_cast<double>(d));
  for (Index j = 0; j < n; ++j)
    if (x.col(j).norm() > 1.0) x.col(j).normalize();
  return x;
}

NormBudget budget(double b, double c, double d_t) {
  NormBudget out;
  out.B = b;
  out.C = c;
  out.D_T = d_t;
  return out;
}

TEST(EmpiricalRisk, PerfectFitIsZero) {
  Rng rng(1);
  const Matrix wv = rng.normal_matrix(2, 3);
  const StudentModel s{wv, Matrix::Identity(3, 3), identity_map(3), {}};
  EXPECT_LE(empirical_risk(s, {wv}, rng.normal_matrix(3, 6)), 1e-28);
}

TEST(EmpiricalRisk, ZeroStudentSingleSample) {
  Rng rng(2);
  const Matrix wv = rng.normal_matrix(2, 3);
  const Matrix x = rng.normal_matrix(3, 1);
  const StudentModel s{Matrix::Zero(2, 3), Matrix::Identity(3, 3), identity_map(3), {}};
  EXPECT_NEAR(empirical_risk(s, {wv}, x), (wv * x).squaredNorm(), 1e-15);
}

TEST(EmpiricalRisk, EqualsKdLoss) {
  Rng rng(3);
  const TeacherModel t{rng.normal_matrix(3, 4)};
  const StudentModel s{rng.normal_matrix(3, 16), rng.normal_matrix(4, 4), random_map(4, 16, 3),
                       {}};
  const Matrix x = unit_ball_tokens(rng, 4, 10);
  EXPECT_NEAR(empirical_risk(s, t, x), kd_loss(s, t, x), 1e-14);
  EXPECT_EQ(code_of([&] { empirical_risk(s, t, Matrix(4, 0)); }), ErrorCode::kEmptyContext);
}

TEST(RademacherLinear, ZeroFeaturesGiveZero) {
  const auto est = estimate_rademacher_linear(Matrix::Zero(3, 8), 1.0, 200, 1);
  EXPECT_EQ(est.estimate, 0.0);
  EXPECT_EQ(est.std_err, 0.0);
}

TEST(RademacherLinear, SingleFeatureIsItsNorm) {
  Matrix v(3, 1);
  v << 1.0, -2.0, 2.0;
  const auto est = estimate_rademacher_linear(v, 1.0, 100, 2);
  EXPECT_DOUBLE_EQ(est.estimate, 3.0);
  EXPECT_DOUBLE_EQ(est.bound, 3.0);
}

TEST(RademacherLinear, UnitFeaturesRespectBudgetBound) {
  Rng rng(14);
  Matrix phi = rng.normal_matrix(5, 64);
  phi.colwise().normalize();
  const auto est = estimate_rademacher_linear(phi, 1.0, 10'000, 14);
  EXPECT_NEAR(est.bound, 0.125, 1e-15);
  EXPECT_LE(est.estimate, 0.125 + 3.0 * est.std_err);
  EXPECT_FALSE(est.violated);
}

TEST(RademacherLinear, SignDrawsAreReproducible) {
  Rng rng(4);
  const Matrix phi = rng.normal_matrix(3, 10);
  EXPECT_EQ(estimate_rademacher_linear(phi, 1.0, 300, 9).estimate,
            estimate_rademacher_linear(phi, 1.0, 300, 9).estimate);
}

TEST(RademacherLinear, RejectsTooFewDraws) {
  EXPECT_EQ(code_of([] { estimate_rademacher_linear(Matrix::Ones(2, 2), 1.0, 99, 0); }),
            ErrorCode::kTooFewDraws);
}

// Only W = 0 is admissible, so each draw is a signed mean of constants with
// expectation zero.
TEST(RademacherLossClass, ZeroBudgetAveragesSignedConstants) {
  Rng rng(5);
  const TeacherModel t{rng.normal_matrix(2, 3)};
  const Matrix wk = rng.normal_matrix(3, 3);
  const Matrix x = unit_ball_tokens(rng, 3, 16);
  const auto est = estimate_rademacher_loss_class(wk, random_map(3, 8, 5), t, x, 0.0, 2000, 5, 5);
  EXPECT_LE(std::abs(est.lower_estimate), 3.0 * est.std_err);
}

// Teacher 0, identity map, one sample: the loss class is sigma t^2 |phi|^2 for
// |W|_F = t <= B, so each draw's sup comes from a line search over t.
TEST(RademacherLossClass, MatchesLineSearchOracle) {
  Rng rng(6);
  const Matrix wk = rng.normal_matrix(3, 3);
  const Matrix x = unit_ball_tokens(rng, 3, 1);
  const double B = 1.5;
  const int draws = 400;
  const std::uint64_t seed = 6;
  const auto est = estimate_rademacher_loss_class(wk, identity_map(3), {Matrix::Zero(2, 3)}, x, B,
                                                  draws, 20, seed);
  const double phi_sq = (wk * x).squaredNorm();
  double oracle = 0.0;
  for (int t = 0; t < draws; ++t) {
    Rng signs(derive_seed(seed, static_cast<std::uint64_t>(t)));
    const double sigma = signs.sign();
    double best = -std::numeric_limits<double>::infinity();
    for (int g = 0; g <= 1000; ++g) {
      const double radius = B * g / 1000.0;
      best = std::max(best, sigma * radius * radius * phi_sq);
    }
    oracle += best;
  }
  oracle /= draws;
  EXPECT_NEAR(est.lower_estimate, oracle, 1e-12);
}

TEST(RademacherLossClass, ContractionHoldsOverRepeats) {
  int violations = 0;
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    Rng rng(derive_seed(15, rep));
    const TeacherModel t{rng.normal_matrix(3, 4) / 2.0};
    const Matrix wk = rng.normal_matrix(4, 4) / 2.0;
    const Matrix x = unit_ball_tokens(rng, 4, 16);
    const auto est = estimate_rademacher_loss_class(wk, random_map(4, 16, rep), t, x, 1.0, 300,
                                                    30, derive_seed(15, 100 + rep));
    violations += est.violated;
    EXPECT_DOUBLE_EQ(est.contraction_rhs, est.lipschitz * est.linear.estimate);
  }
  EXPECT_EQ(violations, 0);
}

TEST(RademacherLossClass, RejectsBadArguments) {
  const Matrix x = Matrix::Ones(2, 3);
  EXPECT_EQ(code_of([&] {
              estimate_rademacher_loss_class(Matrix::Identity(2, 2), identity_map(2),
                                             {Matrix::Ones(1, 2)}, x, 1.0, 50, 5, 0);
            }),
            ErrorCode::kTooFewDraws);
  EXPECT_EQ(code_of([&] {
              estimate_rademacher_loss_class(Matrix::Identity(2, 2), identity_map(2),
                                             {Matrix::Ones(1, 2)}, x, 1.0, 100, 0, 0);
            }),
            ErrorCode::kInvalidArgument);
}

TEST(MaximizeQuadraticOnBall, ConvexCaseReachesBoundary) {
  // g(W) = |W|_F^2 with S = I has sup B^2.
  const double v = maximize_quadratic_on_ball(0.0, Matrix::Zero(2, 3), Matrix::Identity(3, 3),
                                              2.0, 10);
  EXPECT_NEAR(v, 4.0, 1e-12);
}

TEST(MaximizeQuadraticOnBall, LinearCaseHitsAlignedBoundary) {
  Rng rng(7);
  const Matrix p = rng.normal_matrix(2, 3);
  const double v = maximize_quadratic_on_ball(1.0, p, Matrix::Zero(3, 3), 0.5, 10);
  EXPECT_NEAR(v, 1.0 + 2.0 * 0.5 * p.norm(), 1e-12);
}

TEST(MaximizeQuadraticOnBall, ConcaveCaseNeverBelowOrigin) {
  const double v = maximize_quadratic_on_ball(0.3, Matrix::Zero(2, 2), -Matrix::Identity(2, 2),
                                              1.0, 10);
  EXPECT_DOUBLE_EQ(v, 0.3);
}

TEST(GeneralizationBoundRhs, ZeroBudgetLeavesOnlyTheTail) {
  const BoundReport r = generalization_bound_rhs(0.2, budget(0.0, 3.0, 1.5), 50, 0.1);
  EXPECT_EQ(r.complexity_term, 0.0);
  EXPECT_NEAR(r.rhs, 0.2 + 3.0 * 2.25 * std::sqrt(std::log(20.0) / 100.0), 1e-15);
}

TEST(GeneralizationBoundRhs, QuadruplingNHalvesBothTerms) {
  const BoundReport a = generalization_bound_rhs(0.0, budget(1.2, 0.7, 2.0), 37, 0.05);
  const BoundReport b = generalization_bound_rhs(0.0, budget(1.2, 0.7, 2.0), 148, 0.05);
  EXPECT_NEAR(b.complexity_term, a.complexity_term / 2.0, 1e-15);
  EXPECT_NEAR(b.tail_term, a.tail_term / 2.0, 1e-15);
}

TEST(GeneralizationBoundRhs, UnitCapsAtHundredSamples) {
  const BoundReport r = generalization_bound_rhs(0.0, budget(1.0, 1.0, 1.0), 100, 0.05);
  EXPECT_NEAR(r.complexity_term, 0.8, 1e-15);
  EXPECT_NEAR(r.tail_term, 1.6297218188887435, 1e-14);
  EXPECT_DOUBLE_EQ(r.rhs, r.empirical_risk + r.complexity_term + r.tail_term);
}

TEST(GeneralizationBoundRhs, TermsAreMonotone) {
  double prev_c = std::numeric_limits<double>::infinity();
  double prev_t = prev_c;
  for (Index n : {1, 4, 16, 64, 256, 1024}) {
    const BoundReport r = generalization_bound_rhs(0.0, budget(1.0, 1.0, 1.0), n, 0.05);
    EXPECT_LE(r.complexity_term, prev_c);
    EXPECT_LE(r.tail_term, prev_t);
    prev_c = r.complexity_term;
    prev_t = r.tail_term;
  }
  for (double x : {0.0, 0.5, 1.0, 2.0}) {
    const double base = generalization_bound_rhs(0.0, budget(1.0, 1.0, 1.0), 10, 0.05).rhs;
    EXPECT_LE(generalization_bound_rhs(0.0, budget(x, 1.0, 1.0), 10, 0.05).rhs,
              generalization_bound_rhs(0.0, budget(x + 0.5, 1.0, 1.0), 10, 0.05).rhs);
    EXPECT_LE(generalization_bound_rhs(0.0, budget(1.0, x, 1.0), 10, 0.05).rhs,
              generalization_bound_rhs(0.0, budget(1.0, x + 0.5, 1.0), 10, 0.05).rhs);
    EXPECT_LE(generalization_bound_rhs(0.0, budget(1.0, 1.0, x), 10, 0.05).rhs,
              generalization_bound_rhs(0.0, budget(1.0, 1.0, x + 0.5), 10, 0.05).rhs);
    EXPECT_GT(base, 0.0);
  }
}

TEST(GeneralizationBoundRhs, RejectsDeltaOutsideUnitInterval) {
  for (double delta : {0.0, 1.0, 1.5, -0.1}) {
    EXPECT_EQ(code_of([&] { generalization_bound_rhs(0.0, budget(1, 1, 1), 10, delta); }),
              ErrorCode::kInvalidDelta);
  }
}

TEST(WithLhs, ViolationIsStrictExcess) {
  const BoundReport r = generalization_bound_rhs(0.1, budget(1, 1, 1), 10, 0.05);
  EXPECT_FALSE(with_lhs(r, r.rhs).violated);
  EXPECT_TRUE(with_lhs(r, std::nextafter(r.rhs, 1e300)).violated);
}

TEST(CheckGeneralizationBound, MeasuresCapsOverBothSets) {
  Rng rng(9);
  const TeacherModel t{rng.normal_matrix(2, 3)};
  const Matrix wk = rng.normal_matrix(3, 3);
  const FeatureMap map = random_map(3, 8, 9);
  const StudentModel s{0.1 * rng.normal_matrix(2, 8), wk, map, 1.0};
  const Matrix train = unit_ball_tokens(rng, 3, 20);
  const Matrix holdout = 2.0 * unit_ball_tokens(rng, 3, 200);
  const BoundReport r = check_generalization_bound(s, t, train, holdout, budget(1.0, 0, 0), 0.05);
  Matrix both(3, 220);
  both << train, holdout;
  const NormBudget b = measure_budget(budget(1.0, 0, 0), map, wk, t, both, &s.w);
  EXPECT_DOUBLE_EQ(r.rhs, generalization_bound_rhs(kd_loss(s, t, train), b, 20, 0.05).rhs);
  EXPECT_DOUBLE_EQ(r.lhs, kd_loss(s, t, holdout));
  EXPECT_FALSE(r.violated);
}

SupGapTask gaussian_task(std::uint64_t seed, double B) {
  Rng rng(seed);
  SupGapTask task;
  task.wv = rng.normal_matrix(4, 4) / 2.0;
  task.wk = rng.normal_matrix(4, 4) / 2.0;
  task.map = random_map(4, 16, seed);
  task.B = B;
  task.n = 64;
  task.sampler = [](Index n, Rng& r) { return unit_ball_tokens(r, 4, n); };
  return task;
}

TEST(SupGap, ZeroBudgetIsPlainRiskDifference) {
  const SupGapSummary s = estimate_sup_gap(gaussian_task(1, 0.0), 40, 1);
  EXPECT_LE(std::abs(s.median), 0.1);
}

TEST(SupGap, IdenticalSetsGiveZero) {
  SupGapTask task = gaussian_task(2, 1.0);
  task.holdout_is_train = true;
  const SupGapSummary s = estimate_sup_gap(task, 30, 2);
  for (double phi : s.phis) EXPECT_EQ(phi, 0.0);
}

TEST(SupGap, ExceedanceWithinDelta) {
  const SupGapSummary s = estimate_sup_gap(gaussian_task(16, 1.0), 100, 16);
  EXPECT_EQ(s.phis.size(), 100u);
  EXPECT_LE(s.exceedance_fraction, 0.05);
  EXPECT_LE(s.q05, s.median);
  EXPECT_LE(s.median, s.q95);
}

TEST(SupGap, RejectsTooFewResamples) {
  EXPECT_EQ(code_of([] { estimate_sup_gap(gaussian_task(1, 1.0), 29, 0); }),
            ErrorCode::kTooFewResamples);
}

}  // namespace
}  // namespace icl_kd_lab
