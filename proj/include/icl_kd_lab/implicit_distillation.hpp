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

// Reference-weight initialization read as knowledge distillation.
//
// Teacher f_T(x) = W^V x (the frozen value projection). Student
// f_S(x; W) = W phi(W^K x). One gradient step on the squared KD loss from
// W = 0 lands on W* = (2 eta* / N) sum_i W^V x_i phi(W^K x_i)^T, which equals
// the demonstration block W_0 of the attention split once 2 eta* / N = 1 / D'.

#pragma once

#include <optional>
#include <string>

#include "icl_kd_lab/attention_duality.hpp"
#include "icl_kd_lab/feature_map.hpp"
#include "icl_kd_lab/matrix_core.hpp"

namespace icl_kd_lab {

struct TeacherModel {
  Matrix wv;
  /// Declared output cap D_T. Bound checks use max(declared, measured).
  double declared_cap = 0.0;
};

struct StudentModel {
  Matrix w;   // m x r
  Matrix wk;  // k x d, frozen
  FeatureMap map;
  /// Frobenius budget B on W; enforced when set.
  std::optional<double> budget;
};

inline Vector teacher_forward(const TeacherModel& t, const Vector& x) {
  require(t.wv.cols() == x.size(), ErrorCode::kDimensionMismatch,
          "teacher_forward: W^V width != token dim");
  return t.wv * x;
}

namespace detail {

inline void require_explicit(const FeatureMap& map, const char* who) {
  require(map.has_explicit_features(), ErrorCode::kUnsupportedMapKind,
          std::string(who) + ": exact_kernel has no explicit student weights");
}

inline void validate_student(const StudentModel& s, Index token_dim) {
  require_explicit(s.map, "student");
  require(s.wk.cols() == token_dim, ErrorCode::kDimensionMismatch,
          "student W^K width != token dim");
  require(s.map.input_dim() == s.wk.rows(), ErrorCode::kDimensionMismatch,
          "feature map input dim != key dim");
  require(s.w.cols() == s.map.feature_dim(), ErrorCode::kDimensionMismatch,
          "student W width != feature dim");
  if (s.budget) {
    require(s.w.norm() <= *s.budget * (1.0 + 1e-12), ErrorCode::kBudgetExceeded,
            "|W|_F = " + std::to_string(s.w.norm()) + " exceeds budget " +
                std::to_string(*s.budget));
  }
}

inline void validate_pair(const StudentModel& s, const TeacherModel& t, const Matrix& samples) {
  require(samples.cols() >= 1, ErrorCode::kEmptyContext, "need at least one sample");
  require(t.wv.cols() == samples.rows(), ErrorCode::kDimensionMismatch,
          "teacher W^V width != token dim");
  validate_student(s, samples.rows());
  require(s.w.rows() == t.wv.rows(), ErrorCode::kDimensionMismatch,
          "student and teacher output dims differ");
}

}  // namespace detail

/// phi(W^K X), one column per token.
inline Matrix key_features(const FeatureMap& map, const Matrix& wk, const Matrix& tokens) {
  detail::require_explicit(map, "key_features");
  require(wk.cols() == tokens.rows() && map.input_dim() == wk.rows(),
          ErrorCode::kDimensionMismatch, "key_features: shapes disagree");
  return apply_feature_map(map, wk * tokens);
}

inline Vector student_forward(const StudentModel& s, const Vector& x) {
  detail::validate_student(s, x.size());
  return s.w * feature_vector(s.map, s.wk * x);
}

/// (1/N) sum_i |W phi(W^K x_i) - W^V x_i|^2
inline double kd_loss(const StudentModel& s, const TeacherModel& t, const Matrix& samples) {
  detail::validate_pair(s, t, samples);
  const Matrix residual = s.w * key_features(s.map, s.wk, samples) - t.wv * samples;
  return residual.squaredNorm() / static_cast<double>(samples.cols());
}

/// (2/N) sum_i [W phi_i - W^V x_i] phi_i^T
inline Matrix kd_gradient(const StudentModel& s, const TeacherModel& t, const Matrix& samples) {
  detail::validate_pair(s, t, samples);
  const Matrix phi = key_features(s.map, s.wk, samples);
  const Matrix residual = s.w * phi - t.wv * samples;
  return (2.0 / static_cast<double>(samples.cols())) * residual * phi.transpose();
}

struct DistillResult {
  Matrix w_star;
  double eta_star = 0.0;
  /// Demonstration block W_0 of the attention split (check_w0_identity only).
  std::optional<Matrix> matched_w0;
  double identity_gap = 0.0;
  double partition_value = 0.0;
};

/// Single step from W_init = 0:
///   W* = (2 eta* / N) sum_i W^V x_i phi(W^K x_i)^T
inline DistillResult distill_one_step(const TeacherModel& t, const Matrix& wk,
                                      const FeatureMap& map, const Matrix& samples,
                                      double eta_star) {
  require(samples.cols() >= 1, ErrorCode::kEmptyContext, "distill_one_step: N must be >= 1");
  require(eta_star > 0.0, ErrorCode::kNonPositiveLearningRate, "eta* must be > 0");
  require(t.wv.cols() == samples.rows(), ErrorCode::kDimensionMismatch,
          "teacher W^V width != token dim");
  const Matrix phi = key_features(map, wk, samples);
  const double n = static_cast<double>(samples.cols());

  Matrix w_star = Matrix::Zero(t.wv.rows(), phi.rows());
  for (Index i = 0; i < samples.cols(); ++i)
    w_star.noalias() += (t.wv * samples.col(i)) * phi.col(i).transpose();
  w_star *= 2.0 * eta_star / n;

  DistillResult result;
  result.w_star = std::move(w_star);
  result.eta_star = eta_star;
  return result;
}

/// How eta* is chosen in check_w0_identity.
struct EtaStarPolicy {
  enum class Mode { kMatched, kFixed };
  Mode mode = Mode::kMatched;
  double fixed_value = 0.0;

  static EtaStarPolicy matched() { return {}; }
  static EtaStarPolicy fixed(double eta) { return {Mode::kFixed, eta}; }
};

/// W_0 = (1/D') W^V X_D phi(W^K X_D)^T, assembled as one matrix product.
inline Matrix demonstration_block_weights(const AttentionWeights& w, const TokenMatrix& tokens,
                                          const FeatureMap& map, double partition_value) {
  const Matrix phi = key_features(map, w.wk, tokens.demos);
  return (w.wv * tokens.demos) * phi.transpose() / partition_value;
}

/// Compares one-step distillation with eta* = N / (2 D') (or a fixed eta*)
/// against the demonstration block of the attention split.
inline DistillResult check_w0_identity(const AttentionWeights& w, const TokenMatrix& tokens,
                                       const FeatureMap& map,
                                       EtaStarPolicy policy = EtaStarPolicy::matched()) {
  require(tokens.num_demos() >= 1, ErrorCode::kEmptyContext,
          "check_w0_identity needs at least one demonstration");
  detail::require_explicit(map, "check_w0_identity");
  const double partition = partition_function(w, tokens);
  const double n = static_cast<double>(tokens.num_demos());
  const double eta_star =
      policy.mode == EtaStarPolicy::Mode::kMatched ? n / (2.0 * partition) : policy.fixed_value;

  DistillResult result = distill_one_step(TeacherModel{w.wv}, w.wk, map, tokens.demos, eta_star);
  result.matched_w0 = demonstration_block_weights(w, tokens, map, partition);
  result.identity_gap = (result.w_star - *result.matched_w0).norm();
  result.partition_value = partition;
  return result;
}

/// 1 / (2 lambda_max(Sigma_hat)) with Sigma_hat = (1/N) sum_i phi_i phi_i^T.
/// Any eta* below this strictly decreases the KD loss from W = 0.
inline double safe_distill_step(const FeatureMap& map, const Matrix& wk, const Matrix& samples) {
  require(samples.cols() >= 1, ErrorCode::kEmptyContext, "need at least one sample");
  const Matrix phi = key_features(map, wk, samples);
  const double sigma = spectral_norm(phi / std::sqrt(static_cast<double>(samples.cols())));
  require(sigma > 0.0, ErrorCode::kNonPositiveInput, "features are all zero");
  return 1.0 / (2.0 * sigma * sigma);
}

}  // namespace icl_kd_lab
