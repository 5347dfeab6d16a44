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

#include "icl_kd_lab/attention_duality.hpp"
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

struct Instance {
  AttentionWeights w;
  TokenMatrix tokens;
};

Instance random_instance(std::uint64_t seed, Index d, Index n, Index m_queries, Index k = 4,
                         Index m = 3) {
  Rng rng(seed);
  Instance in;
  in.w.wq = rng.normal_matrix(k, d);
  in.w.wk = rng.normal_matrix(k, d);
  in.w.wv = rng.normal_matrix(m, d);
  in.tokens.demos = rng.normal_matrix(d, n);
  in.tokens.queries = rng.normal_matrix(d, m_queries);
  in.tokens.next_query = rng.normal_vector(d);
  return in;
}

// Scores, exponentials, and the weighted sum written out one token at a time.
Vector direct_attention(const Instance& in) {
  const Matrix seq = in.tokens.sequence();
  const double scale = in.w.scale_by_sqrt_d ? 1.0 / std::sqrt(double(seq.rows())) : 1.0;
  const Vector q = in.w.wq * in.tokens.next_query;
  Vector weights(seq.cols());
  for (Index i = 0; i < seq.cols(); ++i)
    weights(i) = std::exp((in.w.wk * seq.col(i)).dot(q) * scale);
  weights /= weights.sum();
  Vector out = Vector::Zero(in.w.wv.rows());
  for (Index i = 0; i < seq.cols(); ++i) out += weights(i) * (in.w.wv * seq.col(i));
  return out;
}

FeatureMap exact_map(Index k) {
  return build_feature_map({FeatureMapKind::kExactKernel, k, 0, 0});
}

TEST(LinearAttention, IdentityValuesAndKeys) {
  Vector q(2);
  q << 2, 3;
  const Vector out = linear_attention(Matrix::Identity(2, 2), Matrix::Identity(2, 2), q);
  EXPECT_EQ(out, q);
}

TEST(LinearAttention, SingleOuterProduct) {
  Matrix v(2, 1), k(2, 1);
  v << 1, 0;
  k << 0, 1;
  Vector q(2);
  q << 0, 5;
  const Vector out = linear_attention(v, k, q);
  EXPECT_EQ(out(0), 5.0);
  EXPECT_EQ(out(1), 0.0);
}

TEST(LinearAttention, MatchesExplicitSum) {
  Rng rng(2);
  const Matrix v = rng.normal_matrix(4, 6);
  const Matrix k = rng.normal_matrix(4, 6);
  const Vector q = rng.normal_vector(4);
  Vector expected = Vector::Zero(4);
  for (Index i = 0; i < 6; ++i) expected += v.col(i) * k.col(i).dot(q);
  EXPECT_LE((linear_attention(v, k, q) - expected).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(OneStepLinearGd, ZeroStepReturnsInitialPrediction) {
  Rng rng(1);
  const Matrix w0 = rng.normal_matrix(2, 3);
  const Vector x = rng.normal_vector(3);
  const Vector out =
      one_step_linear_gd(w0, rng.normal_matrix(3, 4), rng.normal_matrix(2, 4), 0.0, x);
  EXPECT_LE((out - w0 * x).norm(), 1e-15);
}

TEST(OneStepLinearGd, SingleSampleClosedForm) {
  Matrix x(2, 1), y(2, 1);
  x << 1, 0;
  y << 2, 0;
  EXPECT_EQ(linear_gd_signals(Matrix::Zero(2, 2), x, y, 1.0), y);
  const Vector out = one_step_linear_gd(Matrix::Zero(2, 2), x, y, 1.0, x.col(0));
  EXPECT_EQ(out(0), 2.0);
  EXPECT_EQ(out(1), 0.0);
}

TEST(OneStepLinearGd, EqualsInitialPlusLinearAttention) {
  Rng rng(13);
  const Matrix w0 = rng.normal_matrix(3, 4);
  const Matrix x = rng.normal_matrix(4, 5);
  const Matrix y = rng.normal_matrix(3, 5);
  const Vector x_test = rng.normal_vector(4);
  const double eta = 0.3;
  const Vector gd = one_step_linear_gd(w0, x, y, eta, x_test);
  const Vector dual = w0 * x_test + linear_attention(linear_gd_signals(w0, x, y, eta), x, x_test);
  EXPECT_LE((gd - dual).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OneStepLinearGd, RejectsNegativeStepAndBadShapes) {
  EXPECT_EQ(code_of([] {
              linear_gd_signals(Matrix::Zero(2, 2), Matrix::Ones(2, 1), Matrix::Ones(2, 1), -1.0);
            }),
            ErrorCode::kNonPositiveLearningRate);
  EXPECT_EQ(code_of([] {
              linear_gd_signals(Matrix::Zero(2, 3), Matrix::Ones(2, 1), Matrix::Ones(2, 1), 1.0);
            }),
            ErrorCode::kDimensionMismatch);
}

TEST(SoftmaxAttention, SingleTokenReturnsItsValue) {
  Instance in;
  in.w.wq = in.w.wk = in.w.wv = Matrix::Identity(3, 3);
  in.tokens.demos = Matrix(3, 1);
  in.tokens.demos << 0.5, -1.0, 2.0;
  in.tokens.next_query = Vector::Ones(3);
  EXPECT_LE((softmax_attention(in.w, in.tokens) - in.tokens.demos.col(0)).norm(), 1e-15);
}

TEST(SoftmaxAttention, IdenticalTokensReturnProjectedToken) {
  Instance in = random_instance(4, 3, 0, 0);
  Vector x(3);
  x << 0.2, -0.7, 1.1;
  in.tokens.demos = x.replicate(1, 2);
  EXPECT_LE((softmax_attention(in.w, in.tokens) - in.w.wv * x).norm(), 1e-14);
}

TEST(SoftmaxAttention, MatchesDirectComposition) {
  const Instance in = random_instance(21, 4, 3, 2);
  EXPECT_LE((softmax_attention(in.w, in.tokens) - direct_attention(in)).cwiseAbs().maxCoeff(),
            1e-13);
}

TEST(SoftmaxAttention, ScalingFlagControlsTemperature) {
  Instance in = random_instance(21, 4, 3, 2);
  in.w.scale_by_sqrt_d = false;
  EXPECT_LE((softmax_attention(in.w, in.tokens) - direct_attention(in)).cwiseAbs().maxCoeff(),
            1e-13);
}

TEST(SoftmaxAttention, RejectsEmptyContextAndBadShapes) {
  Instance in = random_instance(1, 3, 0, 0);
  EXPECT_EQ(code_of([&] { softmax_attention(in.w, in.tokens); }), ErrorCode::kEmptyContext);
  in = random_instance(1, 3, 2, 1);
  in.w.wv = Matrix::Ones(2, 4);
  EXPECT_EQ(code_of([&] { softmax_attention(in.w, in.tokens); }), ErrorCode::kDimensionMismatch);
}

TEST(DualGdPrediction, WithoutQueriesEqualsAttentionOverDemos) {
  const Instance in = random_instance(5, 4, 3, 0);
  EXPECT_LE(relative_max_diff(dual_gd_prediction(in.w, in.tokens, exact_map(4)),
                              direct_attention(in)),
            1e-12);
}

TEST(DualGdPrediction, WithoutDemosEqualsAttentionOverQueries) {
  const Instance in = random_instance(6, 4, 0, 3);
  EXPECT_LE(relative_max_diff(dual_gd_prediction(in.w, in.tokens, exact_map(4)),
                              direct_attention(in)),
            1e-12);
}

TEST(DualGdPrediction, EqualsSoftmaxAttention) {
  const Instance in = random_instance(21, 4, 3, 2);
  EXPECT_LE(relative_max_diff(dual_gd_prediction(in.w, in.tokens, exact_map(4)),
                              softmax_attention(in.w, in.tokens)),
            1e-12);
}

// With the identity map the dual is normalized linear attention.
TEST(DualGdPrediction, IdentityMapGivesNormalizedLinearAttention) {
  const Instance in = random_instance(7, 3, 2, 2);
  const FeatureMap identity = build_feature_map({FeatureMapKind::kIdentity, 4, 0, 0});
  const Matrix seq = in.tokens.sequence();
  const double s = 1.0 / std::sqrt(3.0);
  const Vector scores = (in.w.wk * seq).transpose() * (in.w.wq * in.tokens.next_query) * s;
  const Vector expected = in.w.wv * seq * scores / scores.sum();
  EXPECT_LE(relative_max_diff(dual_gd_prediction(in.w, in.tokens, identity), expected), 1e-12);
}

TEST(DualGdPrediction, RejectsRandomFeatures) {
  const Instance in = random_instance(21, 4, 3, 2);
  const FeatureMap map = build_feature_map({FeatureMapKind::kPositiveRandom, 4, 16, 0});
  EXPECT_EQ(code_of([&] { dual_gd_prediction(in.w, in.tokens, map); }),
            ErrorCode::kUnsupportedMapKind);
}

TEST(SplitDemoQuery, NoQueriesMeansNoGradientTerm) {
  const DualityReport r = split_demo_query(random_instance(8, 4, 3, 0).w,
                                           random_instance(8, 4, 3, 0).tokens);
  EXPECT_TRUE(r.gradient_term.isZero(0.0));
}

TEST(SplitDemoQuery, NoDemosMeansNoInitialTerm) {
  const Instance in = random_instance(9, 4, 0, 3);
  EXPECT_TRUE(split_demo_query(in.w, in.tokens).w0_term.isZero(0.0));
}

TEST(SplitDemoQuery, TermsReproduceAttention) {
  const Instance in = random_instance(21, 4, 3, 2);
  const DualityReport r = split_demo_query(in.w, in.tokens);
  EXPECT_LE(r.max_abs_diff, 1e-12);
  EXPECT_LE(((r.w0_term + r.gradient_term) - direct_attention(in)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SplitDemoQuery, RejectsEmptyContext) {
  const Instance in = random_instance(1, 3, 0, 0);
  EXPECT_EQ(code_of([&] { split_demo_query(in.w, in.tokens); }), ErrorCode::kEmptyContext);
}

TEST(PartitionFunction, ZeroScoresCountTokens) {
  Instance in = random_instance(10, 3, 4, 2);
  in.w.wk.setZero();
  EXPECT_DOUBLE_EQ(partition_function(in.w, in.tokens), 6.0);
}

TEST(PartitionFunction, SingleScoreOfLogTwo) {
  Instance in;
  in.w.wq = Matrix::Constant(1, 1, std::log(2.0));
  in.w.wk = Matrix::Ones(1, 1);
  in.w.wv = Matrix::Ones(1, 1);
  in.tokens.demos = Matrix::Ones(1, 1);
  in.tokens.next_query = Vector::Ones(1);
  EXPECT_NEAR(partition_function(in.w, in.tokens), 2.0, 1e-15);
}

TEST(PartitionFunction, MatchesExponentiatedScores) {
  const Instance in = random_instance(21, 4, 3, 2);
  const Matrix seq = in.tokens.sequence();
  double expected = 0.0;
  for (Index i = 0; i < seq.cols(); ++i)
    expected += std::exp((in.w.wk * seq.col(i)).dot(in.w.wq * in.tokens.next_query) / 2.0);
  EXPECT_NEAR(partition_function(in.w, in.tokens), expected, 1e-12 * expected);
}

TEST(ImpliedLearningRate, KnownValues) {
  EXPECT_EQ(implied_learning_rate(1.0, 1.0), 1.0);
  EXPECT_EQ(implied_learning_rate(4.0, 2.0), 0.5);
  EXPECT_EQ(code_of([] { implied_learning_rate(0.0, 1.0); }), ErrorCode::kNonPositiveInput);
  EXPECT_EQ(code_of([] { implied_learning_rate(1.0, -1.0); }), ErrorCode::kNonPositiveInput);
}

// Concentrating attention on one token by pushing the other scores down
// shrinks D' below the flat value N + M, so eta grows.
TEST(ImpliedLearningRate, SharperAttentionGivesLargerStep) {
  Instance in;
  in.w.wq = Matrix::Ones(1, 1);
  in.w.wv = Matrix::Ones(1, 1);
  in.w.scale_by_sqrt_d = false;
  in.tokens.demos = Matrix(1, 3);
  in.tokens.demos << 0.0, -20.0, -20.0;
  in.tokens.next_query = Vector::Ones(1);
  in.w.wk = Matrix::Zero(1, 1);
  const double flat = partition_function(in.w, in.tokens);
  in.w.wk = Matrix::Ones(1, 1);
  const double sharp = partition_function(in.w, in.tokens);
  EXPECT_DOUBLE_EQ(flat, 3.0);
  EXPECT_NEAR(sharp, 1.0 + 2.0 * std::exp(-20.0), 1e-15);
  EXPECT_GT(implied_learning_rate(sharp, 1.0), implied_learning_rate(flat, 1.0));
}

}  // namespace
}  // namespace icl_kd_lab
