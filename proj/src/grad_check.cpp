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

#include "tmf/grad_check.hpp"

#include <cmath>

namespace tmf {

namespace {

Scalar eval_loss(const LossBuilder& build_loss, std::span<const Matrix> point) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const Matrix& m : point) leaves.push_back(tape.leaf(m, true));
  Var loss = build_loss(tape, leaves);
  if (loss.size() != 1)
    throw ContractError("grad_check: builder must return a scalar loss");
  return loss.value()(0, 0);
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build_loss,
                           std::span<const Matrix> point, double tolerance,
                           double step) {
  GradCheckReport report;
  report.tolerance = tolerance;

  // Reverse-mode gradients, one pass.
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(point.size());
    for (const Matrix& m : point) leaves.push_back(tape.leaf(m, true));
    Var loss = build_loss(tape, leaves);
    if (loss.size() != 1)
      throw ContractError("grad_check: builder must return a scalar loss");
    tape.backward(loss);
    for (const Var& l : leaves) analytic.push_back(l.grad());
  }

  // Central differences per entry.
  std::vector<Matrix> perturbed(point.begin(), point.end());
  double worst = 0.0;
  std::string worst_entry;
  for (std::size_t k = 0; k < perturbed.size(); ++k) {
    Matrix& m = perturbed[k];
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        Scalar saved = m(i, j);
        m(i, j) = saved + step;
        Scalar up = eval_loss(build_loss, perturbed);
        m(i, j) = saved - step;
        Scalar down = eval_loss(build_loss, perturbed);
        m(i, j) = saved;
        Scalar numeric = (up - down) / (2.0 * step);
        Scalar a = analytic[k](i, j);
        double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
        double rel = std::abs(a - numeric) / denom;
        if (rel > worst) {
          worst = rel;
          worst_entry = str("input ", k, " entry (", i, ",", j, ")");
        }
      }
    }
  }
  report.worst_rel_error = worst;
  report.worst_entry = worst_entry;
  report.pass = worst < tolerance;
  return report;
}

GradCheckReport grad_check_params(
    const std::function<Var(Tape&, std::span<Var>)>& build_loss,
    std::span<Matrix* const> params, double tolerance, double step) {
  std::vector<Matrix> point;
  point.reserve(params.size());
  for (Matrix* p : params) point.push_back(*p);

  // Adapter: write the candidate point into the live parameter storage, then
  // let the model build its loss from freshly bound leaves.
  LossBuilder adapter = [&](Tape& tape, std::span<const Var> leaves) -> Var {
    std::vector<Var> bound(leaves.begin(), leaves.end());
    for (std::size_t k = 0; k < params.size(); ++k)
      *params[k] = leaves[k].value();
    return build_loss(tape, bound);
  };
  GradCheckReport report = grad_check(adapter, point, tolerance, step);
  // Restore the original parameters.
  for (std::size_t k = 0; k < params.size(); ++k) *params[k] = point[k];
  return report;
}

}  // namespace tmf
