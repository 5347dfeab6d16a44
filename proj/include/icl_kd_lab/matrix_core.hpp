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

// Dense linear algebra shared by every module. Storage is Eigen's dynamic
// column-major matrix; "row-major" only matters for the CSV format below.

#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "icl_kd_lab/errors.hpp"
#include "icl_kd_lab/random.hpp"

namespace icl_kd_lab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline void require_finite(const Matrix& m, const char* what) {
  require(m.allFinite(), ErrorCode::kNonFiniteInput,
          std::string(what) + " has NaN/Inf entries");
}

/// Exponentiate and normalize every column. The column maximum is subtracted
/// first, so the result is exact in ratio and never overflows.
inline Matrix column_softmax(const Matrix& scores) {
  Matrix out(scores.rows(), scores.cols());
  for (Index j = 0; j < scores.cols(); ++j) {
    const double peak = scores.col(j).maxCoeff();
    out.col(j) = (scores.col(j).array() - peak).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

/// Ridge relative to the mean diagonal: lambda = epsilon_rel * trace(A) / dim.
struct RidgeConfig {
  double epsilon_rel = 1e-8;
};

inline double ridge_lambda(const Matrix& gram, const RidgeConfig& cfg) {
  require(cfg.epsilon_rel >= 0.0, ErrorCode::kInvalidArgument,
          "epsilon_rel must be nonnegative");
  if (gram.rows() == 0) return 0.0;
  return cfg.epsilon_rel * gram.trace() / static_cast<double>(gram.rows());
}

/// Solves (gram + lambda I) X = rhs by Cholesky. Throws FactorizationFailure
/// when the shifted matrix is not numerically positive definite; the caller is
/// expected to retry with a larger epsilon_rel.
inline Matrix solve_ridge(const Matrix& gram, const Matrix& rhs,
                          const RidgeConfig& cfg) {
  require(gram.rows() == gram.cols(), ErrorCode::kDimensionMismatch,
          "solve_ridge: gram must be square");
  require(gram.rows() == rhs.rows(), ErrorCode::kDimensionMismatch,
          "solve_ridge: rhs rows must match gram");
  require_finite(gram, "solve_ridge: gram");
  require_finite(rhs, "solve_ridge: rhs");

  Matrix shifted = gram;
  shifted.diagonal().array() += ridge_lambda(gram, cfg);
  Eigen::LLT<Matrix> llt(shifted);
  require(llt.info() == Eigen::Success, ErrorCode::kFactorizationFailure,
          "gram + lambda I is not positive definite; raise epsilon_rel");
  Matrix x = llt.solve(rhs);
  require(x.allFinite(), ErrorCode::kFactorizationFailure,
          "Cholesky solve produced non-finite values");
  return x;
}

inline double frobenius_norm(const Matrix& m) { return m.norm(); }

/// Largest singular value by power iteration on m^T m. Stops once the
/// eigen-residual of the Rayleigh quotient is below tol relative to it, which
/// pins the singular value to relative accuracy tol.
inline double spectral_norm(const Matrix& m, double tol = 1e-12,
                            int max_iterations = 10'000) {
  require(tol > 0.0, ErrorCode::kInvalidArgument, "tol must be positive");
  require_finite(m, "spectral_norm: input");
  if (m.size() == 0 || m.isZero(0.0)) return 0.0;

  const Matrix gram = m.transpose() * m;
  Rng rng(0x5eedULL);
  Vector v = rng.normal_vector(gram.cols());
  v.normalize();
  for (int it = 0; it < max_iterations; ++it) {
    Vector w = gram * v;
    const double lambda = v.dot(w);
    if (lambda <= 0.0) {
      // Start vector fell into the null space; perturb and continue.
      v = rng.normal_vector(gram.cols()).normalized();
      continue;
    }
    const double residual = (w - lambda * v).norm();
    if (residual <= tol * lambda) return std::sqrt(lambda);
    v = w / w.norm();
  }
  throw Error(ErrorCode::kNoConvergence,
              "spectral_norm: power iteration did not converge");
}

// CSV: "rows,cols" header, then one matrix row per line, %.17g.

inline void write_csv(std::ostream& os, const Matrix& m) {
  os << m.rows() << ',' << m.cols() << '\n';
  char buf[32];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j != 0) os << ',';
      os << buf;
    }
    os << '\n';
  }
}

inline Matrix read_csv(std::istream& is) {
  std::string header;
  require(static_cast<bool>(std::getline(is, header)), ErrorCode::kParseError,
          "CSV matrix: missing header");
  long rows = -1;
  long cols = -1;
  char comma = 0;
  std::istringstream hs(header);
  hs >> rows >> comma >> cols;
  require(!hs.fail() && comma == ',' && rows >= 0 && cols >= 0,
          ErrorCode::kParseError, "CSV matrix: bad header '" + header + "'");

  Matrix m(rows, cols);
  std::string line;
  for (long i = 0; i < rows; ++i) {
    require(static_cast<bool>(std::getline(is, line)), ErrorCode::kParseError,
            "CSV matrix: expected " + std::to_string(rows) + " rows");
    std::istringstream ls(line);
    std::string cell;
    long j = 0;
    while (std::getline(ls, cell, ',')) {
      require(j < cols, ErrorCode::kParseError, "CSV matrix: row too long");
      try {
        std::size_t used = 0;
        m(i, j) = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kParseError, "CSV matrix: bad value '" + cell + "'");
      }
      ++j;
    }
    require(j == cols, ErrorCode::kParseError, "CSV matrix: row too short");
  }
  require_finite(m, "CSV matrix");
  return m;
}

inline void save_csv(const std::string& path, const Matrix& m) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorCode::kIoFailure, "cannot open " + path);
  write_csv(os, m);
  require(static_cast<bool>(os), ErrorCode::kIoFailure, "write failed: " + path);
}

inline Matrix load_csv(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::kIoFailure, "cannot open " + path);
  return read_csv(is);
}

}  // namespace icl_kd_lab
