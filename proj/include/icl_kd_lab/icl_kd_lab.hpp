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

// Umbrella header.

#pragma once

#include "icl_kd_lab/attention_duality.hpp"
#include "icl_kd_lab/errors.hpp"
#include "icl_kd_lab/feature_map.hpp"
#include "icl_kd_lab/generalization_bounds.hpp"
#include "icl_kd_lab/harness/config.hpp"
#include "icl_kd_lab/harness/experiment.hpp"
#include "icl_kd_lab/harness/report.hpp"
#include "icl_kd_lab/harness/synthetic.hpp"
#include "icl_kd_lab/implicit_distillation.hpp"
#include "icl_kd_lab/matrix_core.hpp"
#include "icl_kd_lab/prompt_ranker.hpp"
#include "icl_kd_lab/random.hpp"
#include "icl_kd_lab/shift_analysis.hpp"
#include "icl_kd_lab/version.hpp"
