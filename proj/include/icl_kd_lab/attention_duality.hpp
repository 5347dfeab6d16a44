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

// Single-layer attention and its gradient-descent readings.
//
// Linear attention LA(V, K, q) = V K^T q is exactly the correction a single
// gradient step adds to a linear layer. Softmax attention over the sequence
// [X_D, X_Q] splits into a demonstration block and a query block, each of the
// form (1/D') W^V X phi(W^K X)^T phi(W^Q x'), where D' is the softmax
// partition value. One block plays the initial reference weights W_0 and the
// other the step -eta dL/dW.
//
// Duality checks never materialize phi: kernel values exp(k^T q) are used
// directly, so the identities hold to rounding.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "icl_kd_lab/feature_map.hpp"
#include "icl_kd_lab/matrix_core.hpp"

namespace icl_kd_lab {

/// Demonstrations X_D (d x N), earlier queries X_Q (d x M), and the query
/// x' (length d) whose output is being produced.
struct TokenMatrix {
  Matrix demos;
  Matrix queries;
  Vector next_query;

  Index dim() const noexcept { return next_query.size(); }
  Index num_demos() const noexcept { return demos.cols(); }
  Index num_queries() const noexcept { return queries.cols(); }

  void validate() const {
    require(dim() >= 1, ErrorCode::kDimensionMismatch, "next_query is empty");
    require(demos.cols() == 0 || demos.rows() == dim(), ErrorCode::kDimensionMismatch,
            "demonstration tokens must have d rows");
    require(queries.cols() == 0 || queries.rows() == dim(),
            ErrorCode::kDimensionMismatch, "query tokens must have d rows");
    require(demos.allFinite() && queries.allFinite() && next_query.allFinite(),
            ErrorCode::kNonFiniteInput, "token matrix has NaN/Inf entries");
  }

  /// [X_D, X_Q] as one d x (N + M) matrix.
  Matrix sequence() const {
    Matrix all(dim(), num_demos() + num_queries());
    if (num_demos() > 0) all.leftCols(num_demos()) = demos;
    if (num_queries() > 0) all.rightCols(num_queries()) = queries;
    return all;
  }
};

/// Frozen projections. Wq, Wk: k x d. Wv: m x d.
struct AttentionWeights {
  Matrix wq;
  Matrix wk;
  Matrix wv;
  bool scale_by_sqrt_d = true;

  void validate(Index d) const {
    require(wq.cols() == d && wk.cols() == d && wv.cols() == d,
            ErrorCode::kDimensionMismatch, "projection widths must equal token dim");
    require(wq.rows() == wk.rows(), ErrorCode::kDimensionMismatch,
            "Wq and Wk must have the same number of rows");
    require(wq.allFinite() && wk.allFinite() && wv.allFinite(),
            ErrorCode::kNonFiniteInput, "attention weights have NaN/Inf entries");
  }

  /// Multiplier applied to every raw score (W^K x)^T (W^Q x').
  double score_scale() const {
    return scale_by_sqrt_d ? 1.0 / std::sqrt(static_cast<double>(wq.cols())) : 1.0;
  }
};

struct DualityReport {
  Vector attention_output;
  Vector dual_prediction;
  Vector w0_term;
  Vector gradient_term;
  double partition_value = 0.0;
  double max_abs_diff = 0.0;
};

/// LA(V, K, q) = V (K^T q) = (sum_i v_i k_i^T) q.
inline Vector linear_attention(const Matrix& values, const Matrix& keys, const Vector& query) {
  require(values.cols() == keys.cols(), ErrorCode::kDimensionMismatch,
          "linear_attention: V and K need the same number of columns");
  require(keys.rows() == query.size(), ErrorCode::kDimensionMismatch,
          "linear_attention: key dim != query dim");
  return values * (keys.transpose() * query);
}

enum class LossKind { kSquared };

/// Backprop signals e_i = -eta * grad_{yhat_i} L(y_i, W0 x_i), one column per
/// sample. For L = 1/2 |y - yhat|^2 this is eta * (y_i - W0 x_i).
inline Matrix linear_gd_signals(const Matrix& w0, const Matrix& inputs, const Matrix& targets,
                                double eta, LossKind loss = LossKind::kSquared) {
  require(w0.cols() == inputs.rows(), ErrorCode::kDimensionMismatch,
          "W0 width must equal input dim");
  require(w0.rows() == targets.rows() && inputs.cols() == targets.cols(),
          ErrorCode::kDimensionMismatch, "targets must be d_o x N");
  require(eta >= 0.0, ErrorCode::kNonPositiveLearningRate, "eta must be >= 0");
  switch (loss) {
    case LossKind::kSquared:
      return eta * (targets - w0 * inputs);
  }
  return {};
}

/// One gradient step on f(x) = W x from W0, then predict at x_test.
/// Builds W_hat = W0 + sum_i e_i x_i^T explicitly.
inline Vector one_step_linear_gd(const Matrix& w0, const Matrix& inputs, const Matrix& targets,
                                 double eta, const Vector& x_test,
                                 LossKind loss = LossKind::kSquared) {
  require(x_test.size() == w0.cols(), ErrorCode::kDimensionMismatch,
          "x_test dim must equal W0 width");
  const Matrix signals = linear_gd_signals(w0, inputs, targets, eta, loss);
  Matrix w_hat = w0;
  for (Index i = 0; i < inputs.cols(); ++i)
    w_hat.noalias() += signals.col(i) * inputs.col(i).transpose();
  return w_hat * x_test;
}

namespace detail {

inline void validate_attention_inputs(const AttentionWeights& w, const TokenMatrix& tokens) {
  tokens.validate();
  w.validate(tokens.dim());
}

/// Keys and query pre-multiplied by sqrt(score_scale), so that
/// exp(k~^T q~) equals the scaled softmax score.
struct ScaledKernelInputs {
  Matrix demo_keys;
  Matrix query_keys;
  Vector query;
};

inline ScaledKernelInputs scaled_kernel_inputs(const AttentionWeights& w,
                                               const TokenMatrix& tokens) {
  const double root = std::sqrt(w.score_scale());
  ScaledKernelInputs in;
  in.demo_keys.resize(w.wk.rows(), 0);
  in.query_keys.resize(w.wk.rows(), 0);
  if (tokens.num_demos() > 0) in.demo_keys = root * (w.wk * tokens.demos);
  if (tokens.num_queries() > 0) in.query_keys = root * (w.wk * tokens.queries);
  in.query = root * (w.wq * tokens.next_query);
  return in;
}

inline Vector kernel_column(const FeatureMap& map, const Matrix& keys, const Vector& query) {
  if (keys.cols() == 0) return Vector(0);
  return kernel_gram(map, keys, Matrix(query)).col(0);
}

inline Vector weighted_values(const Matrix& wv, const Matrix& tokens, const Vector& weights) {
  if (tokens.cols() == 0) return Vector::Zero(wv.rows());
  return wv * (tokens * weights);
}

}  // namespace detail

/// h' = W^V X softmax((W^K X)^T (W^Q x') * s), s = 1/sqrt(d) when scaling is on.
inline Vector softmax_attention(const AttentionWeights& w, const TokenMatrix& tokens) {
  detail::validate_attention_inputs(w, tokens);
  require(tokens.num_demos() + tokens.num_queries() >= 1, ErrorCode::kEmptyContext,
          "softmax_attention needs at least one context token");
  const Matrix seq = tokens.sequence();
  const Matrix scores = (w.wk * seq).transpose() * (w.wq * tokens.next_query) * w.score_scale();
  const Matrix weights = column_softmax(scores);
  return w.wv * (seq * weights.col(0));
}

/// D' = sum over all N + M context tokens of exp(scaled score).
inline double partition_function(const AttentionWeights& w, const TokenMatrix& tokens) {
  detail::validate_attention_inputs(w, tokens);
  require(tokens.num_demos() + tokens.num_queries() >= 1, ErrorCode::kEmptyContext,
          "partition_function needs at least one context token");
  const Matrix seq = tokens.sequence();
  const Vector scores = (w.wk * seq).transpose() * (w.wq * tokens.next_query) * w.score_scale();
  return scores.array().exp().sum();
}

inline double implied_learning_rate(double partition_value, double c) {
  require(partition_value > 0.0 && c > 0.0, ErrorCode::kNonPositiveInput,
          "implied_learning_rate needs D' > 0 and c > 0");
  return c / partition_value;
}

/// Test prediction of the reference model f(z) = W phi(z) after one step on
///   L(W) = -(1 / (eta D)) sum_{i in demos} (W^V x_i)^T W phi(W^K x_i),
/// starting from W_0 = (1/D) W^V X_Q phi(W^K X_Q)^T and evaluated at
/// z = W^Q x'. D is tied to the attention partition value D'.
///
/// exact_kernel gives the softmax kernel; identity gives the linear-kernel
/// analogue (normalized linear attention). positive_random is rejected.
inline Vector dual_gd_prediction(const AttentionWeights& w, const TokenMatrix& tokens,
                                 const FeatureMap& map) {
  detail::validate_attention_inputs(w, tokens);
  require(map.kind() != FeatureMapKind::kPositiveRandom, ErrorCode::kUnsupportedMapKind,
          "dual_gd_prediction requires an exact kernel (or identity for tests)");
  require(map.input_dim() == w.wk.rows(), ErrorCode::kDimensionMismatch,
          "feature map input dim must equal key dim");
  require(tokens.num_demos() + tokens.num_queries() >= 1, ErrorCode::kEmptyContext,
          "dual_gd_prediction needs at least one context token");

  const auto in = detail::scaled_kernel_inputs(w, tokens);
  const Vector demo_kernel = detail::kernel_column(map, in.demo_keys, in.query);
  const Vector query_kernel = detail::kernel_column(map, in.query_keys, in.query);
  const double partition = demo_kernel.sum() + query_kernel.sum();
  require(std::isfinite(partition) && partition != 0.0, ErrorCode::kNonFiniteInput,
          "kernel partition value is zero or non-finite");

  // W_0 phi(q): the query block.
  const Vector init_term = detail::weighted_values(w.wv, tokens.queries, query_kernel) / partition;
  // -eta dL/dW phi(q) = (1/D) sum_i (W^V x_i) k(x_i, q): the demonstration block.
  const Vector step_term = detail::weighted_values(w.wv, tokens.demos, demo_kernel) / partition;
  return init_term + step_term;
}

/// Demonstrations as initial weights, queries as the gradient step:
///   w0_term       = (1/D') W^V X_D phi(W^K X_D)^T phi(W^Q x')
///   gradient_term = (1/D') W^V X_Q phi(W^K X_Q)^T phi(W^Q x')
/// in exact kernel form, compared against softmax_attention.
inline DualityReport split_demo_query(const AttentionWeights& w, const TokenMatrix& tokens) {
  detail::validate_attention_inputs(w, tokens);
  require(tokens.num_demos() + tokens.num_queries() >= 1, ErrorCode::kEmptyContext,
          "split_demo_query needs N >= 1 or M >= 1");

  const FeatureMap exact = build_feature_map(
      {FeatureMapKind::kExactKernel, w.wk.rows(), 0, 0});
  const auto in = detail::scaled_kernel_inputs(w, tokens);
  const Vector demo_kernel = detail::kernel_column(exact, in.demo_keys, in.query);
  const Vector query_kernel = detail::kernel_column(exact, in.query_keys, in.query);

  DualityReport report;
  report.partition_value = demo_kernel.sum() + query_kernel.sum();
  report.w0_term = detail::weighted_values(w.wv, tokens.demos, demo_kernel) / report.partition_value;
  report.gradient_term =
      detail::weighted_values(w.wv, tokens.queries, query_kernel) / report.partition_value;
  report.dual_prediction = report.w0_term + report.gradient_term;
  report.attention_output = softmax_attention(w, tokens);
  report.max_abs_diff =
      (report.dual_prediction - report.attention_output).cwiseAbs().maxCoeff();
  return report;
}

/// max |a - b| / max(max |b|, tiny). The tolerance denominator used by the
/// duality sweeps.
inline double relative_max_diff(const Vector& a, const Vector& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace icl_kd_lab
