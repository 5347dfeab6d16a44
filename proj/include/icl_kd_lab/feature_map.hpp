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

// The softmax kernel exp(x^T y) and the explicit feature maps that stand in
// for its (infinite-dimensional) Mercer features.
//
//   identity         phi(z) = z. Debug map; the kernel becomes x^T y.
//   exact_kernel     no explicit features; Gram entries are exp(x^T y).
//   positive_random  phi(z)_i = exp(w_i^T z - |z|^2 / 2) / sqrt(r), w_i ~ N(0, I).
//                    E_w[phi(x)^T phi(y)] = exp(x^T y) and every feature is > 0.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "icl_kd_lab/matrix_core.hpp"

namespace icl_kd_lab {

enum class FeatureMapKind { kIdentity, kExactKernel, kPositiveRandom };

inline std::string_view to_string(FeatureMapKind kind) {
  switch (kind) {
    case FeatureMapKind::kIdentity: return "identity";
    case FeatureMapKind::kExactKernel: return "exact_kernel";
    case FeatureMapKind::kPositiveRandom: return "positive_random";
  }
  return "unknown";
}

inline FeatureMapKind parse_feature_map_kind(std::string_view name) {
  if (name == "identity") return FeatureMapKind::kIdentity;
  if (name == "exact_kernel") return FeatureMapKind::kExactKernel;
  if (name == "positive_random") return FeatureMapKind::kPositiveRandom;
  throw Error(ErrorCode::kInvalidSpec,
              "unknown feature map kind '" + std::string(name) + "'");
}

inline constexpr Index kDefaultFeatureDim = 1024;

struct FeatureMapSpec {
  FeatureMapKind kind = FeatureMapKind::kExactKernel;
  Index input_dim = 1;
  Index feature_dim = kDefaultFeatureDim;  // positive_random only
  std::uint64_t seed = 0;
};

inline double softmax_kernel(const Vector& x, const Vector& y) {
  require(x.size() == y.size(), ErrorCode::kDimensionMismatch,
          "softmax_kernel: vector sizes differ");
  return std::exp(x.dot(y));
}

/// Immutable after construction.
class FeatureMap {
 public:
  const FeatureMapSpec& spec() const noexcept { return spec_; }
  FeatureMapKind kind() const noexcept { return spec_.kind; }
  Index input_dim() const noexcept { return spec_.input_dim; }

  /// r x d, one frequency per row. Empty unless positive_random.
  const Matrix& projection() const noexcept { return projection_; }

  bool has_explicit_features() const noexcept {
    return spec_.kind != FeatureMapKind::kExactKernel;
  }

  /// Width of phi(z). Zero for exact_kernel.
  Index feature_dim() const noexcept {
    switch (spec_.kind) {
      case FeatureMapKind::kIdentity: return spec_.input_dim;
      case FeatureMapKind::kPositiveRandom: return spec_.feature_dim;
      case FeatureMapKind::kExactKernel: return 0;
    }
    return 0;
  }

  friend FeatureMap build_feature_map(const FeatureMapSpec& spec);

 private:
  FeatureMapSpec spec_;
  Matrix projection_;
};

inline FeatureMap build_feature_map(const FeatureMapSpec& spec) {
  require(spec.input_dim >= 1, ErrorCode::kInvalidSpec, "input dim d must be >= 1");
  if (spec.kind == FeatureMapKind::kPositiveRandom)
    require(spec.feature_dim >= 1, ErrorCode::kInvalidSpec,
            "feature dim r must be >= 1 for positive_random");
  FeatureMap map;
  map.spec_ = spec;
  if (spec.kind == FeatureMapKind::kPositiveRandom) {
    Rng rng(spec.seed);
    map.projection_ = Matrix(spec.feature_dim, spec.input_dim);
    // Row-major draw so frequency i depends only on (seed, i).
    for (Index i = 0; i < spec.feature_dim; ++i)
      for (Index j = 0; j < spec.input_dim; ++j) map.projection_(i, j) = rng.normal();
  }
  return map;
}

/// Column j of the result is phi(column j of tokens).
inline Matrix apply_feature_map(const FeatureMap& map, const Matrix& tokens) {
  require(tokens.rows() == map.input_dim(), ErrorCode::kDimensionMismatch,
          "apply_feature_map: token dim " + std::to_string(tokens.rows()) +
              " != map input dim " + std::to_string(map.input_dim()));
  switch (map.kind()) {
    case FeatureMapKind::kIdentity:
      return tokens;
    case FeatureMapKind::kExactKernel:
      throw Error(ErrorCode::kUnsupportedMapKind,
                  "exact_kernel has no explicit features");
    case FeatureMapKind::kPositiveRandom: {
      const double inv_sqrt_r = 1.0 / std::sqrt(static_cast<double>(map.feature_dim()));
      Matrix logits = map.projection() * tokens;
      const Eigen::RowVectorXd half_sq = 0.5 * tokens.colwise().squaredNorm();
      logits.rowwise() -= half_sq;
      return (logits.array().exp() * inv_sqrt_r).matrix();
    }
  }
  return {};
}

inline Vector feature_vector(const FeatureMap& map, const Vector& token) {
  return apply_feature_map(map, Matrix(token)).col(0);
}

/// Entry (i, j) = phi(x_i)^T phi(y_j); exact_kernel returns exp(x_i^T y_j).
inline Matrix kernel_gram(const FeatureMap& map, const Matrix& xs, const Matrix& ys) {
  require(xs.rows() == map.input_dim() && ys.rows() == map.input_dim(),
          ErrorCode::kDimensionMismatch, "kernel_gram: token dims differ from map");
  if (map.kind() == FeatureMapKind::kExactKernel)
    return (xs.transpose() * ys).array().exp().matrix();
  return apply_feature_map(map, xs).transpose() * apply_feature_map(map, ys);
}

}  // namespace icl_kd_lab
