// Copyright 2026 The tmfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tmf/autodiff.hpp"

namespace tmf {

struct GradCheckReport {
  bool pass = false;
  double worst_rel_error = 0.0;
  // "input 2 entry (1,3)" of the worst offender; empty when nothing differs.
  std::string worst_entry;
  double tolerance = 0.0;

  explicit operator bool() const { return pass; }
};

// Builds a scalar loss from differentiable leaves. Must be a pure function
// of the leaf values (rebuilt on a fresh tape per evaluation).
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

// Compares reverse-mode gradients against central finite differences
// (step h, default 1e-5) at the given point. Relative error uses
// |a - n| / max(|a|, |n|, 1) per entry, so tiny gradients are judged on an
// absolute scale well above the differencing noise.
GradCheckReport grad_check(const LossBuilder& build_loss,
                           std::span<const Matrix> point, double tolerance,
                           double step = 1e-5);

// Same comparison for gradients w.r.t. externally owned parameter matrices
// (e.g. model weights). The builder must read the current contents of
// `params` each time it runs.
GradCheckReport grad_check_params(
    const std::function<Var(Tape&, std::span<Var>)>& build_loss,
    std::span<Matrix* const> params, double tolerance, double step = 1e-5);

}  // namespace tmf
