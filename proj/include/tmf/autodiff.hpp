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

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tmf/errors.hpp"
#include "tmf/types.hpp"

namespace tmf {

class Tape;

// Handle to one node of a Tape. Cheap to copy; valid as long as the tape
// that produced it is alive and has not been cleared.
//
// Every value is a dense double matrix. Row vectors (1 x n) are the
// convention for single samples, so a batch stacks samples as rows.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Gradient of the last backward() loss w.r.t. this node. Only populated
  // for nodes reachable from the loss; leaves created with requires_grad
  // get a zero matrix even when unreachable.
  const Matrix& grad() const;
  bool requires_grad() const;

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  bool valid() const { return tape_ != nullptr; }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive operations as they execute so adjoints can be replayed
// in reverse. A tape and its vars are confined to a single thread;
// independent tapes may run concurrently.
//
// Typical use:
//   Tape t;
//   Var w = t.leaf(weights, /*requires_grad=*/true);
//   Var loss = sum(relu(matmul(x, w)));
//   t.backward(loss);
//   Matrix g = w.grad();
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = false);
  Var constant(Matrix value) { return leaf(std::move(value), false); }
  // 1x1 constant.
  Var scalar(Scalar v);

  // Reverse pass from a scalar loss. Resets all gradients first, so the
  // result only reflects this loss. Throws ContractError if loss is not
  // scalar or belongs to another tape.
  void backward(const Var& loss);

  // Drops all nodes. Outstanding Vars become invalid.
  void clear();

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  friend Var matmul(const Var&, const Var&);
  friend Var transpose(const Var&);
  friend Var add(const Var&, const Var&);
  friend Var sub(const Var&, const Var&);
  friend Var mul(const Var&, const Var&);
  friend Var scale(const Var&, Scalar);
  friend Var relu(const Var&);
  friend Var sigmoid(const Var&);
  friend Var tanh(const Var&);
  friend Var exp(const Var&);
  friend Var log(const Var&);
  friend Var add_bias(const Var&, const Var&);
  friend Var rows_affine(const Var&, const Var&, const Var&);
  friend Var sum(const Var&);
  friend Var block(const Var&, Index, Index, Index, Index);
  friend Var concat_cols(std::span<const Var>);
  friend Var frobenius_norm(const Var&);
  friend Var softmax(const Var&);
  friend Var softmax_rows(const Var&);
  friend Var cross_entropy(const Var&, Index);
  friend Var softmax_cross_entropy_rows(const Var&, std::span<const int>,
                                        std::span<const Scalar>);
  friend Var batchnorm_train(const Var&, const Var&, const Var&, Scalar);

  struct Node {
    Matrix value;
    Matrix grad;  // sized on demand during backward
    bool requires_grad = false;
    bool touched = false;  // received a nonzero upstream contribution
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var emit(Matrix value, bool requires_grad,
           std::function<void(Tape&, std::size_t)> backward_fn);

  const Matrix& val(std::size_t id) const { return nodes_[id].value; }
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }
  // Accumulates an adjoint contribution into node `id`.
  void acc(std::size_t id, const Matrix& g);

  std::vector<Node> nodes_;
};

// ---- primitive operations -------------------------------------------------
//
// All ops evaluate eagerly and record their adjoint on the operands' tape.
// add/sub/mul accept equal shapes or a 1x1 operand (scalar broadcast).

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, Scalar c);

Var relu(const Var& a);  // subgradient 0 at the origin
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);  // DomainError on any non-positive entry

// y(r, j) = x(r, j) + bias(j); bias is a length-cols vector (either shape).
Var add_bias(const Var& x, const Var& bias);
// y(r, j) = x(r, j) * s(j) + c(j); per-column affine map.
Var rows_affine(const Var& x, const Var& s, const Var& c);

Var sum(const Var& a);   // 1x1
Var mean(const Var& a);  // 1x1

// Rectangular sub-block [i0, i0+p) x [j0, j0+q).
Var block(const Var& a, Index i0, Index j0, Index p, Index q);
Var slice_cols(const Var& a, Index j0, Index n);
Var concat_cols(std::span<const Var> parts);

Var frobenius_norm(const Var& a);  // 1x1; subgradient 0 at the zero matrix

// Numerically stable softmax of a single vector (1 x n or n x 1),
// computed with max subtraction.
Var softmax(const Var& logits);
// Row-wise softmax of a batch.
Var softmax_rows(const Var& logits);

// -log p[target]; p should come from softmax. IndexError on bad target,
// DomainError if p[target] is not positive.
Var cross_entropy(const Var& probabilities, Index target_class);

// Fused stable softmax + cross entropy over batch rows:
//   sum_r weights[r] * (logsumexp(z_r) - z_r[targets[r]])
// Weights are gradient constants. This is the head every trainer uses; the
// adjoint w.r.t. row r of the logits is weights[r] * (softmax(z_r) - onehot).
Var softmax_cross_entropy_rows(const Var& logits, std::span<const int> targets,
                               std::span<const Scalar> weights);

// Batch normalization in training mode: per-column standardization by batch
// statistics (biased variance), then scale/shift. gamma and beta are
// length-cols vectors. Requires at least 2 rows.
Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta,
                    Scalar epsilon);

}  // namespace tmf
