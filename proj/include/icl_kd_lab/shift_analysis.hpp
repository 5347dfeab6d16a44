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

// Prompt shift: how far the one-step distilled weights drift from the
// target-optimal reference weights when demonstrations come from a prompt
// distribution Q instead of the target D, measured through the mean embedding
// of A(x) = vec(x phi(W^K x)^T).
//
// Population expectations are replaced by plug-in sample means. Constants
// enter bounds as max(declared cap, sample supremum), and a bound counts as
// violated only when lhs > rhs + 3 standard errors (delta method).

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string_view>

#include "icl_kd_lab/implicit_distillation.hpp"
#include "icl_kd_lab/matrix_core.hpp"

namespace icl_kd_lab {

enum class SampleLabel { kTarget, kPrompt };

inline std::string_view to_string(SampleLabel label) {
  return label == SampleLabel::kTarget ? "target_D" : "prompt_Q";
}

/// Declared population caps. Zero means "not declared".
struct ShiftCaps {
  double M_x = 0.0;    // |x|
  double M_phi = 0.0;  // |phi(W^K x)|
  double M_V = 0.0;    // |W^V|_F
  double M_T = 0.0;    // |W^V x|
};

struct DistributionSample {
  SampleLabel label = SampleLabel::kTarget;
  Matrix tokens;  // d x n
  ShiftCaps declared;

  Index size() const noexcept { return tokens.cols(); }

  void validate() const {
    require(tokens.cols() >= 1, ErrorCode::kEmptyContext, "distribution sample is empty");
    require(tokens.allFinite(), ErrorCode::kNonFiniteInput, "sample has NaN/Inf entries");
    if (declared.M_x > 0.0) {
      require(tokens.colwise().norm().maxCoeff() <= declared.M_x * (1.0 + 1e-12),
              ErrorCode::kInvalidArgument, "sample token exceeds declared M_x");
    }
  }
};

struct SecondMoment {
  Matrix sigma_phi;  // ridge included
  double ridge_used = 0.0;
  double min_eig_estimate = 0.0;
};

struct CrossMoment {
  Matrix matrix;  // (1/n) sum_i x_i phi_i^T, d x r
  SampleLabel source = SampleLabel::kTarget;
};

namespace detail {

inline Matrix sample_features(const FeatureMap& map, const Matrix& wk,
                              const DistributionSample& sample) {
  sample.validate();
  return key_features(map, wk, sample.tokens);
}

inline Matrix raw_second_moment(const Matrix& phi) {
  return phi * phi.transpose() / static_cast<double>(phi.cols());
}

inline Matrix raw_cross_moment(const Matrix& tokens, const Matrix& phi) {
  return tokens * phi.transpose() / static_cast<double>(tokens.cols());
}

}  // namespace detail

/// Sigma_phi = (1/n) sum_i phi_i phi_i^T + lambda I.
inline SecondMoment second_moment(const FeatureMap& map, const Matrix& wk,
                                  const DistributionSample& sample, const RidgeConfig& ridge) {
  const Matrix raw = detail::raw_second_moment(detail::sample_features(map, wk, sample));
  SecondMoment out;
  out.ridge_used = ridge_lambda(raw, ridge);
  out.sigma_phi = raw;
  out.sigma_phi.diagonal().array() += out.ridge_used;
  out.min_eig_estimate =
      Eigen::SelfAdjointEigenSolver<Matrix>(out.sigma_phi, Eigen::EigenvaluesOnly)
          .eigenvalues()
          .minCoeff();
  return out;
}

inline CrossMoment cross_moment(const FeatureMap& map, const Matrix& wk,
                                const DistributionSample& sample) {
  const Matrix phi = detail::sample_features(map, wk, sample);
  return {detail::raw_cross_moment(sample.tokens, phi), sample.label};
}

/// Solves W* Sigma_phi = W^V M_D (regularized normal equations of the target
/// KD risk). Sigma_phi is symmetric, so this is Sigma_phi W*^T = (W^V M_D)^T.
inline Matrix optimal_weight(const DistributionSample& target, const Matrix& wv, const Matrix& wk,
                             const FeatureMap& map, const RidgeConfig& ridge) {
  const Matrix phi = detail::sample_features(map, wk, target);
  require(wv.cols() == target.tokens.rows(), ErrorCode::kDimensionMismatch,
          "W^V width != token dim");
  const Matrix rhs = wv * detail::raw_cross_moment(target.tokens, phi);
  return solve_ridge(detail::raw_second_moment(phi), rhs.transpose(), ridge).transpose();
}

/// |W (Sigma + lambda I) - W^V M_D|_F / |W^V M_D|_F.
inline double normal_equation_residual(const Matrix& w, const DistributionSample& target,
                                       const Matrix& wv, const Matrix& wk, const FeatureMap& map,
                                       const RidgeConfig& ridge) {
  const Matrix phi = detail::sample_features(map, wk, target);
  Matrix sigma = detail::raw_second_moment(phi);
  sigma.diagonal().array() += ridge_lambda(sigma, ridge);
  const Matrix rhs = wv * detail::raw_cross_moment(target.tokens, phi);
  const double scale = rhs.norm();
  return (w * sigma - rhs).norm() / (scale > 0.0 ? scale : 1.0);
}

/// MMD with the linear kernel on A(x) = vec(x phi(W^K x)^T): the distance
/// between the two sample mean embeddings, |M_a - M_b|_F.
inline double mmd_embedding(const DistributionSample& a, const DistributionSample& b,
                            const FeatureMap& map, const Matrix& wk) {
  require(a.tokens.rows() == b.tokens.rows(), ErrorCode::kDimensionMismatch,
          "mmd_embedding: samples have different token dims");
  return (cross_moment(map, wk, a).matrix - cross_moment(map, wk, b).matrix).norm();
}

struct OffsetReport {
  double delta_w_norm = 0.0;
  double std_err = 0.0;
  double mmd = 0.0;
  double eta = 0.0;
  // Constants actually used: max(declared, measured).
  double M_x = 0.0;
  double M_phi = 0.0;
  double M_V = 0.0;
  double inv_sigma_norm = 0.0;        // |Sigma^-1|_2
  double eta_minus_inv_sigma = 0.0;   // |eta I - Sigma^-1|_2
  double min_eig = 0.0;
  double first_term_bound = 0.0;      // M_V M_x M_phi |eta I - Sigma^-1|_2
  double bound_plain = 0.0;
  double bound_whitened = 0.0;        // eta M_V M_x M_phi MMD
  bool violated_plain = false;
  bool violated_whitened = false;
};

namespace detail {

inline double max_column_norm(const Matrix& m) {
  return m.cols() == 0 ? 0.0 : m.colwise().norm().maxCoeff();
}

inline double variance_of_mean(const Vector& influence) {
  const double n = static_cast<double>(influence.size());
  if (influence.size() < 2) return 0.0;
  const double mean = influence.mean();
  return (influence.array() - mean).square().sum() / (n - 1.0) / n;
}

}  // namespace detail

/// Offset of E[W_0] = eta W^V M_Q from W* and both bounds on it:
///   whitened   eta M_V M_x M_phi MMD
///   plain      M_V M_x M_phi (|eta I - Sigma^-1|_2 + |Sigma^-1|_2 MMD)
/// The plain form needs no whitening assumption and is the one that must hold.
inline OffsetReport offset_bound_check(const DistributionSample& target,
                                       const DistributionSample& prompt, const Matrix& wv,
                                       const Matrix& wk, const FeatureMap& map, double eta,
                                       const RidgeConfig& ridge) {
  require(eta > 0.0, ErrorCode::kNonPositiveLearningRate, "eta must be > 0");
  require(target.tokens.rows() == prompt.tokens.rows() && wv.cols() == target.tokens.rows(),
          ErrorCode::kDimensionMismatch, "offset_bound_check: token dims disagree");
  const Matrix phi_d = detail::sample_features(map, wk, target);
  const Matrix phi_q = detail::sample_features(map, wk, prompt);
  const Matrix m_d = detail::raw_cross_moment(target.tokens, phi_d);
  const Matrix m_q = detail::raw_cross_moment(prompt.tokens, phi_q);

  Matrix sigma = detail::raw_second_moment(phi_d);
  sigma.diagonal().array() += ridge_lambda(sigma, ridge);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  const Vector& lambdas = eig.eigenvalues();
  require(lambdas.minCoeff() > 0.0, ErrorCode::kFactorizationFailure,
          "Sigma_phi + ridge is not positive definite; raise epsilon_rel");

  const Matrix w_star = optimal_weight(target, wv, wk, map, ridge);
  const Matrix delta_w = eta * wv * m_q - w_star;

  OffsetReport out;
  out.eta = eta;
  out.delta_w_norm = delta_w.norm();
  out.mmd = (m_q - m_d).norm();
  out.min_eig = lambdas.minCoeff();
  out.inv_sigma_norm = 1.0 / out.min_eig;
  out.eta_minus_inv_sigma = (eta - lambdas.array().inverse()).abs().maxCoeff();
  out.M_x = std::max({target.declared.M_x, prompt.declared.M_x,
                      detail::max_column_norm(target.tokens),
                      detail::max_column_norm(prompt.tokens)});
  out.M_phi = std::max({target.declared.M_phi, prompt.declared.M_phi,
                        detail::max_column_norm(phi_d), detail::max_column_norm(phi_q)});
  out.M_V = std::max({target.declared.M_V, prompt.declared.M_V, wv.norm()});

  const double scale = out.M_V * out.M_x * out.M_phi;
  out.first_term_bound = scale * out.eta_minus_inv_sigma;
  out.bound_plain = out.first_term_bound + scale * out.inv_sigma_norm * out.mmd;
  out.bound_whitened = eta * scale * out.mmd;

  // Delta method along U = dW / |dW|. Prompt token j moves E[W_0] by
  // eta W^V x_j phi_j^T; target token i moves W* by
  // (W^V x_i - W* phi_i) phi_i^T Sigma^-1.
  if (out.delta_w_norm > 0.0) {
    const Matrix u = delta_w / out.delta_w_norm;
    const Matrix sigma_inv =
        eig.eigenvectors() * lambdas.array().inverse().matrix().asDiagonal() *
        eig.eigenvectors().transpose();
    const Vector prompt_infl =
        eta * ((wv * prompt.tokens).array() * (u * phi_q).array()).colwise().sum().transpose();
    const Matrix residual = wv * target.tokens - w_star * phi_d;
    const Vector target_infl =
        (residual.array() * (u * sigma_inv * phi_d).array()).colwise().sum().transpose();
    out.std_err = std::sqrt(detail::variance_of_mean(prompt_infl) +
                            detail::variance_of_mean(target_infl));
  }
  out.violated_plain = out.delta_w_norm > out.bound_plain + 3.0 * out.std_err;
  out.violated_whitened = out.delta_w_norm > out.bound_whitened + 3.0 * out.std_err;
  return out;
}

/// Exact (non-relaxed) risk-gap bound for an MMD difference d:
///   4 eta^2 M_T^2 M_phi^4 d^2 + 4 eta M_T^2 M_phi^2 (1 + 2 eta M_phi^2) d
inline double risk_gap_exact_rhs(double eta, double m_t, double m_phi, double d) {
  const double mt2 = m_t * m_t;
  const double mp2 = m_phi * m_phi;
  return 4.0 * eta * eta * mt2 * mp2 * mp2 * d * d + 4.0 * eta * mt2 * mp2 * (1.0 + 2.0 * eta * mp2) * d;
}

enum class RiskGapForm {
  kExactOnly,
  /// Also evaluate the relaxed form; requires 2 eta M_phi^2 < 1.
  kWithMain,
};

struct RiskGapReport {
  double mmd_good = 0.0;
  double mmd_bad = 0.0;
  double delta_mmd = 0.0;
  double risk_good = 0.0;
  double risk_bad = 0.0;
  double lhs = 0.0;  // risk_bad - risk_good
  double std_err = 0.0;
  double eta = 0.0;
  double M_T = 0.0;
  double M_phi = 0.0;
  double rhs_exact = 0.0;
  std::optional<double> rhs_main;
  bool step_condition = false;  // 2 eta M_phi^2 < 1
  bool swapped = false;         // inputs arrived with MMD_good > MMD_bad
  bool violated_exact = false;
  bool violated_main = false;
};

/// Target KD risk of the one-step weights W(Q) = 2 eta W^V M_Q for a good and
/// a bad prompt sample, against
///   exact: 4 eta^2 M_T^2 M_phi^4 d^2 + 4 eta M_T^2 M_phi^2 (1 + 2 eta M_phi^2) d
///   main:  8 eta M_T^2 M_phi^2 d + 4 eta^2 M_T^2 M_phi^4 d^2
/// with d = MMD_bad - MMD_good.
inline RiskGapReport risk_gap_check(const DistributionSample& target,
                                    const DistributionSample& prompt_good,
                                    const DistributionSample& prompt_bad, const Matrix& wv,
                                    const Matrix& wk, const FeatureMap& map, double eta,
                                    RiskGapForm form = RiskGapForm::kExactOnly) {
  require(eta > 0.0, ErrorCode::kNonPositiveLearningRate, "eta must be > 0");
  require(wv.cols() == target.tokens.rows() && prompt_good.tokens.rows() == target.tokens.rows() &&
              prompt_bad.tokens.rows() == target.tokens.rows(),
          ErrorCode::kDimensionMismatch, "risk_gap_check: token dims disagree");

  const Matrix phi_d = detail::sample_features(map, wk, target);
  const Matrix m_d = detail::raw_cross_moment(target.tokens, phi_d);

  RiskGapReport out;
  out.eta = eta;
  const DistributionSample* good = &prompt_good;
  const DistributionSample* bad = &prompt_bad;
  Matrix phi_g = detail::sample_features(map, wk, *good);
  Matrix phi_b = detail::sample_features(map, wk, *bad);
  Matrix m_g = detail::raw_cross_moment(good->tokens, phi_g);
  Matrix m_b = detail::raw_cross_moment(bad->tokens, phi_b);
  out.mmd_good = (m_g - m_d).norm();
  out.mmd_bad = (m_b - m_d).norm();
  if (out.mmd_good > out.mmd_bad) {
    std::swap(good, bad);
    std::swap(phi_g, phi_b);
    std::swap(m_g, m_b);
    std::swap(out.mmd_good, out.mmd_bad);
    out.swapped = true;
  }
  out.delta_mmd = out.mmd_bad - out.mmd_good;

  const Matrix w_g = 2.0 * eta * wv * m_g;
  const Matrix w_b = 2.0 * eta * wv * m_b;
  const Matrix teacher_d = wv * target.tokens;
  const Vector loss_g = (w_g * phi_d - teacher_d).colwise().squaredNorm().transpose();
  const Vector loss_b = (w_b * phi_d - teacher_d).colwise().squaredNorm().transpose();
  out.risk_good = loss_g.mean();
  out.risk_bad = loss_b.mean();
  out.lhs = out.risk_bad - out.risk_good;

  out.M_T = std::max({target.declared.M_T, good->declared.M_T, bad->declared.M_T,
                      detail::max_column_norm(teacher_d),
                      detail::max_column_norm(wv * good->tokens),
                      detail::max_column_norm(wv * bad->tokens)});
  out.M_phi = std::max({target.declared.M_phi, good->declared.M_phi, bad->declared.M_phi,
                        detail::max_column_norm(phi_d), detail::max_column_norm(phi_g),
                        detail::max_column_norm(phi_b)});

  const double mt2 = out.M_T * out.M_T;
  const double mp2 = out.M_phi * out.M_phi;
  const double d = out.delta_mmd;
  out.step_condition = 2.0 * eta * mp2 < 1.0;
  out.rhs_exact = risk_gap_exact_rhs(eta, out.M_T, out.M_phi, d);
  if (form == RiskGapForm::kWithMain) {
    require(out.step_condition, ErrorCode::kStepSizeTooLarge,
            "relaxed risk-gap form needs 2 eta M_phi^2 < 1");
    out.rhs_main = 8.0 * eta * mt2 * mp2 * d + 4.0 * eta * eta * mt2 * mp2 * mp2 * d * d;
  }

  // Delta method. Gradient of the target risk at W: 2 (W Sigma_D - W^V M_D).
  const Matrix sigma_d = detail::raw_second_moment(phi_d);
  const Matrix grad_g = 2.0 * (w_g * sigma_d - wv * m_d);
  const Matrix grad_b = 2.0 * (w_b * sigma_d - wv * m_d);
  auto prompt_influence = [&](const Matrix& grad, const DistributionSample& s, const Matrix& phi) {
    return Vector(2.0 * eta *
                  ((wv * s.tokens).array() * (grad * phi).array()).colwise().sum().transpose());
  };
  out.std_err = std::sqrt(detail::variance_of_mean(loss_b - loss_g) +
                          detail::variance_of_mean(prompt_influence(grad_b, *bad, phi_b)) +
                          detail::variance_of_mean(prompt_influence(grad_g, *good, phi_g)));
  out.violated_exact = out.lhs > out.rhs_exact + 3.0 * out.std_err;
  if (out.rhs_main) out.violated_main = out.lhs > *out.rhs_main + 3.0 * out.std_err;
  return out;
}

}  // namespace icl_kd_lab
