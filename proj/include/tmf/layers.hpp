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
#include <utility>
#include <vector>

#include "tmf/autodiff.hpp"
#include "tmf/grad_check.hpp"
#include "tmf/types.hpp"

namespace tmf {

// A named trainable matrix. Lives outside any tape; forward passes bind it
// as a leaf through a Binder.
struct Param {
  std::string name;
  Matrix value;
  Matrix velocity;  // sized by the optimizer on first use
  bool decay = false;

  Param() = default;
  Param(std::string n, Matrix v, bool d = false)
      : name(std::move(n)), value(std::move(v)), decay(d) {}
};

// Binds parameters onto one tape, each at most once, so that gradients
// accumulate across repeated uses of the same layer within a graph.
class Binder {
 public:
  explicit Binder(Tape& tape) : tape_(&tape) {}

  Var operator()(Param& p);
  Tape& tape() { return *tape_; }

  // Inject an existing leaf for a parameter (grad-check harnesses).
  void preload(Param& p, Var v);

  // (param, gradient) pairs after Tape::backward. ContractError if backward
  // has not run.
  std::vector<std::pair<Param*, const Matrix*>> grads() const;

 private:
  Tape* tape_;
  std::vector<std::pair<Param*, Var>> bound_;
};

// Uniform Glorot initialization in +/- sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(Index rows, Index cols, Rng& rng);

enum class Activation { kNone, kRelu, kSoftmax };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Fully connected layer, y = act(x W^T + b).
struct DenseLayer {
  Param weight;  // [out x in]
  Param bias;    // [1 x out]
  Activation activation = Activation::kNone;

  DenseLayer() = default;
  // Zero-initialized (checkpoint loading, tests of degenerate heads).
  DenseLayer(Index in, Index out, Activation act);
  DenseLayer(Index in, Index out, Activation act, Rng& rng);

  Index in_size() const { return weight.value.cols(); }
  Index out_size() const { return weight.value.rows(); }
  std::vector<Param*> params() { return {&weight, &bias}; }
};

Var dense_forward(Binder& b, DenseLayer& layer, const Var& x);

struct DropoutSpec {
  Scalar keep_probability = 1.0;
  bool train = false;
};

// Inverted dropout: kept entries scaled by 1/keep so the expectation is
// preserved; identity in inference mode or at keep = 1.
Var dropout_apply(const DropoutSpec& spec, const Var& x, Rng& rng);
// The raw mask (entries 0 or 1/keep), for variational reuse across steps.
Matrix dropout_mask(Index rows, Index cols, Scalar keep, Rng& rng);

struct BatchNorm {
  Param gamma;  // [1 x n]
  Param beta;   // [1 x n]
  RowVector running_mean;
  RowVector running_var;
  Scalar epsilon = 1e-5;
  Scalar momentum = 0.1;

  BatchNorm() = default;
  explicit BatchNorm(Index features, Scalar eps = 1e-5, Scalar mom = 0.1);

  Index features() const { return gamma.value.cols(); }
  std::vector<Param*> params() { return {&gamma, &beta}; }
};

// Train mode standardizes by batch statistics and updates running stats;
// inference mode uses the running statistics. Train requires batch >= 2.
Var batchnorm_forward(Binder& b, BatchNorm& bn, const Var& x, bool train);

// One LSTM cell (gate order i, f, g, o). Parameter count is
// 4 * hidden * (input + hidden + 1); the forget-gate bias initializes to +1.
struct LstmCell {
  Param w_input;   // [4h x in]
  Param w_hidden;  // [4h x h]
  Param bias;      // [1 x 4h]

  LstmCell() = default;
  LstmCell(Index input_size, Index hidden_size);
  LstmCell(Index input_size, Index hidden_size, Rng& rng);

  Index input_size() const { return w_input.value.cols(); }
  Index hidden_size() const { return w_hidden.value.cols(); }
  Index param_count() const;
  std::vector<Param*> params() { return {&w_input, &w_hidden, &bias}; }
};

struct LstmOptions {
  bool bidirectional = false;
  int num_layers = 1;  // 1 or 2
  Index max_length = 272;
  Scalar dropout_keep = 1.0;  // variational mask on step outputs
};

// Stacked (optionally bidirectional) LSTM over a whole variable-length
// sequence; no padding exists at this level.
struct Lstm {
  std::vector<LstmCell> cells;  // [layer][direction], direction-major inner
  LstmOptions options;

  Lstm() = default;
  Lstm(Index input_size, Index hidden_size, const LstmOptions& opts, Rng& rng);

  Index hidden_size() const { return cells.front().w_hidden.value.cols(); }
  // 1 x hidden, or 1 x 2*hidden when bidirectional.
  Index output_size() const;
  std::vector<Param*> params();
};

// Runs the recurrence over all T steps of `sequence` (T x input) and returns
// the final hidden state (both directions concatenated when bidirectional).
// ContractError on an empty sequence or T > options.max_length.
Var lstm_sequence_forward(Binder& b, Lstm& lstm, const Var& sequence,
                          bool train = false, Rng* rng = nullptr);

struct SgdOptions {
  Scalar learning_rate = 0.05;
  Scalar momentum = 0.9;
  Scalar weight_decay = 0.0;  // applied only to params flagged decay
};

// SGD with momentum: v <- mu v + g + lambda theta; theta <- theta - eta v.
class Sgd {
 public:
  explicit Sgd(const SgdOptions& opts);

  void step(std::span<const std::pair<Param*, const Matrix*>> grads);
  void step(Binder& b);

  SgdOptions& options() { return opts_; }
  const SgdOptions& options() const { return opts_; }

 private:
  SgdOptions opts_;
};

// Finite-difference check of a model loss w.r.t. its parameters.
GradCheckReport grad_check_model(
    std::span<Param* const> params,
    const std::function<Var(Binder&)>& build_loss, double tolerance,
    double step = 1e-5);

}  // namespace tmf
