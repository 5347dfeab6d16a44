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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace icl_kd_lab {

enum class ErrorCode {
  kDimensionMismatch,
  kNonFiniteInput,
  kFactorizationFailure,
  kNoConvergence,
  kInvalidSpec,
  kUnsupportedMapKind,
  kNonPositiveLearningRate,
  kNonPositiveInput,
  kEmptyContext,
  kBudgetExceeded,
  kTooFewDraws,
  kTooFewResamples,
  kInvalidDelta,
  kStepSizeTooLarge,
  kEmptySet,
  kKTooLarge,
  kInvalidArgument,
  kInvalidConfig,
  kIoFailure,
  kParseError,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kFactorizationFailure: return "FactorizationFailure";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kUnsupportedMapKind: return "UnsupportedMapKind";
    case ErrorCode::kNonPositiveLearningRate: return "NonPositiveLearningRate";
    case ErrorCode::kNonPositiveInput: return "NonPositiveInput";
    case ErrorCode::kEmptyContext: return "EmptyContext";
    case ErrorCode::kBudgetExceeded: return "BudgetExceeded";
    case ErrorCode::kTooFewDraws: return "TooFewDraws";
    case ErrorCode::kTooFewResamples: return "TooFewResamples";
    case ErrorCode::kInvalidDelta: return "InvalidDelta";
    case ErrorCode::kStepSizeTooLarge: return "StepSizeTooLarge";
    case ErrorCode::kEmptySet: return "EmptySet";
    case ErrorCode::kKTooLarge: return "KTooLarge";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// callers (and the harness) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace icl_kd_lab
