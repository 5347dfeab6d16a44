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
#include <vector>

#include <gtest/gtest.h>

#include "icl_kd_lab/feature_map.hpp"
#include "icl_kd_lab/random.hpp"

namespace icl_kd_lab {
namespace {

FeatureMap random_map(Index d, Index r, std::uint64_t seed) {
  return build_feature_map({FeatureMapKind::kPositiveRandom, d, r, seed});
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

TEST(SoftmaxKernel, KnownValues) {
  EXPECT_EQ(softmax_kernel(vec({0, 0}), vec({3, -7})), 1.0);
  EXPECT_DOUBLE_EQ(softmax_kernel(vec({1, 0}), vec({1, 0})), 2.718281828459045);
  EXPECT_DOUBLE_EQ(softmax_kernel(vec({1, 2}), vec({-1, 1})), 2.718281828459045);
}

TEST(SoftmaxKernel, RejectsMismatchedSizes) {
  EXPECT_THROW(softmax_kernel(vec({1}), vec({1, 2})), Error);
}

TEST(BuildFeatureMap, IdentityPassesTokensThrough) {
  const FeatureMap map = build_feature_map({FeatureMapKind::kIdentity, 3, 0, 0});
  EXPECT_EQ(map.feature_dim(), 3);
  const Vector x = vec({1, 2, 3});
  EXPECT_TRUE((feature_vector(map, x).array() == x.array()).all());
}

TEST(BuildFeatureMap, IdentityOnIdentityMatrix) {
  const FeatureMap map = build_feature_map({FeatureMapKind::kIdentity, 2, 0, 0});
  EXPECT_TRUE(apply_feature_map(map, Matrix::Identity(2, 2)).isIdentity(0.0));
}

TEST(BuildFeatureMap, SingleRandomFeatureMatchesDefinition) {
  const FeatureMap map = random_map(2, 1, 42);
  const Vector z = vec({0.3, -0.8});
  const Vector omega = map.projection().row(0).transpose();
  const double expected = std::exp(omega.dot(z) - 0.5 * z.squaredNorm());
  EXPECT_NEAR(feature_vector(map, z)(0), expected, 1e-15 * expected);
}

TEST(BuildFeatureMap, SameSeedSameFrequencies) {
  EXPECT_TRUE((random_map(3, 16, 5).projection().array() ==
               random_map(3, 16, 5).projection().array())
                  .all());
  EXPECT_FALSE((random_map(3, 16, 5).projection().array() ==
                random_map(3, 16, 6).projection().array())
                   .all());
}

TEST(BuildFeatureMap, FrequencyRowsDependOnlyOnSeedAndIndex) {
  const Matrix small = random_map(3, 4, 9).projection();
  const Matrix large = random_map(3, 64, 9).projection();
  EXPECT_TRUE((large.topRows(4).array() == small.array()).all());
}

TEST(BuildFeatureMap, RejectsInvalidSpecs) {
  EXPECT_THROW(build_feature_map({FeatureMapKind::kIdentity, 0, 0, 0}), Error);
  EXPECT_THROW(build_feature_map({FeatureMapKind::kPositiveRandom, 2, 0, 0}), Error);
}

TEST(BuildFeatureMap, KindNamesRoundTrip) {
  for (auto kind : {FeatureMapKind::kIdentity, FeatureMapKind::kExactKernel,
                    FeatureMapKind::kPositiveRandom}) {
    EXPECT_EQ(parse_feature_map_kind(to_string(kind)), kind);
  }
  EXPECT_THROW(parse_feature_map_kind("gaussian"), Error);
}

// Averaged over 100 independent maps the kernel estimate is unbiased.
TEST(BuildFeatureMap, RandomFeaturesAreUnbiased) {
  const Vector x = vec({0.3, -0.2});
  const Vector y = vec({0.1, 0.4});
  std::vector<double> est;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const FeatureMap map = random_map(2, 4096, s);
    est.push_back(feature_vector(map, x).dot(feature_vector(map, y)));
  }
  double mean = 0.0;
  for (double e : est) mean += e;
  mean /= 100.0;
  double ss = 0.0;
  for (double e : est) ss += (e - mean) * (e - mean);
  const double se = std::sqrt(ss / 99.0 / 100.0);
  EXPECT_LE(std::abs(mean - std::exp(-0.05)), 3.0 * se);
}

TEST(ApplyFeatureMap, ZeroTokenGivesUniformFeatures) {
  const FeatureMap map = random_map(3, 50, 1);
  const Vector phi = feature_vector(map, Vector::Zero(3));
  for (Index i = 0; i < phi.size(); ++i) EXPECT_NEAR(phi(i), 1.0 / std::sqrt(50.0), 1e-16);
}

TEST(ApplyFeatureMap, RandomFeaturesArePositive) {
  const FeatureMap map = random_map(4, 256, 3);
  Rng rng(4);
  const Matrix x = 3.0 * rng.normal_matrix(4, 20);
  EXPECT_TRUE((apply_feature_map(map, x).array() > 0.0).all());
}

TEST(ApplyFeatureMap, SelfKernelWithinTenPercent) {
  const FeatureMap map = random_map(3, 2048, 5);
  const Vector x = vec({0.5, -0.4, 0.3});
  const Vector phi = feature_vector(map, x);
  const double exact = std::exp(x.squaredNorm());
  EXPECT_LE(std::abs(phi.squaredNorm() - exact) / exact, 0.10);
}

TEST(ApplyFeatureMap, ExactKernelHasNoFeatures) {
  const FeatureMap map = build_feature_map({FeatureMapKind::kExactKernel, 2, 0, 0});
  EXPECT_EQ(map.feature_dim(), 0);
  EXPECT_FALSE(map.has_explicit_features());
  EXPECT_THROW(apply_feature_map(map, Matrix::Ones(2, 1)), Error);
}

TEST(ApplyFeatureMap, RejectsWrongTokenDim) {
  EXPECT_THROW(apply_feature_map(random_map(3, 8, 0), Matrix::Ones(2, 1)), Error);
}

TEST(KernelGram, ExactKernelOfZero) {
  const FeatureMap map = build_feature_map({FeatureMapKind::kExactKernel, 1, 0, 0});
  const Matrix g = kernel_gram(map, Matrix::Zero(1, 1), Matrix::Zero(1, 1));
  EXPECT_EQ(g(0, 0), 1.0);
}

TEST(KernelGram, IdentityMapIsInnerProduct) {
  const FeatureMap map = build_feature_map({FeatureMapKind::kIdentity, 3, 0, 0});
  Rng rng(8);
  const Matrix x = rng.normal_matrix(3, 4);
  const Matrix y = rng.normal_matrix(3, 5);
  EXPECT_LE((kernel_gram(map, x, y) - x.transpose() * y).norm(), 1e-14);
}

TEST(KernelGram, RandomFeaturesApproximateExactGram) {
  Rng rng(9);
  Matrix x = rng.normal_matrix(3, 8);
  x.colwise().normalize();
  const Matrix exact =
      kernel_gram(build_feature_map({FeatureMapKind::kExactKernel, 3, 0, 0}), x, x);
  const Matrix approx = kernel_gram(random_map(3, 4096, 9), x, x);
  // Var[phi(x)^T phi(y)] = exp(2 x.y) (exp(|x + y|^2) - 1) / r.
  for (Index i = 0; i < 8; ++i) {
    for (Index j = 0; j < 8; ++j) {
      const double rel_sd =
          std::sqrt(std::expm1((x.col(i) + x.col(j)).squaredNorm()) / 4096.0);
      EXPECT_LE(std::abs(approx(i, j) - exact(i, j)), 4.0 * rel_sd * exact(i, j));
    }
  }
}

}  // namespace
}  // namespace icl_kd_lab
