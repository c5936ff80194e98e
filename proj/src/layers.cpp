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

#include "tmf/layers.hpp"

#include <cmath>

namespace tmf {

Var Binder::operator()(Param& p) {
  for (auto& [param, var] : bound_)
    if (param == &p) return var;
  Var v = tape_->leaf(p.value, /*requires_grad=*/true);
  bound_.emplace_back(&p, v);
  return v;
}

void Binder::preload(Param& p, Var v) { bound_.emplace_back(&p, v); }

std::vector<std::pair<Param*, const Matrix*>> Binder::grads() const {
  std::vector<std::pair<Param*, const Matrix*>> out;
  out.reserve(bound_.size());
  for (const auto& [param, var] : bound_) {
    const Matrix& g = var.grad();  // throws ContractError pre-backward
    out.emplace_back(param, &g);
  }
  return out;
}

Matrix glorot_uniform(Index rows, Index cols, Rng& rng) {
  Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(rows + cols));
  std::uniform_real_distribution<Scalar> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

Activation activation_from_string(const std::string& s) {
  if (s == "none") return Activation::kNone;
  if (s == "relu") return Activation::kRelu;
  if (s == "softmax") return Activation::kSoftmax;
  throw ConfigError(str("unknown activation '", s, "'"));
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kSoftmax: return "softmax";
  }
  return "none";
}

DenseLayer::DenseLayer(Index in, Index out, Activation act)
    : weight("weight", Matrix::Zero(out, in)),
      bias("bias", Matrix::Zero(1, out)),
      activation(act) {}

DenseLayer::DenseLayer(Index in, Index out, Activation act, Rng& rng)
    : weight("weight", glorot_uniform(out, in, rng)),
      bias("bias", Matrix::Zero(1, out)),
      activation(act) {}

Var dense_forward(Binder& b, DenseLayer& layer, const Var& x) {
  if (x.cols() != layer.in_size())
    throw DimensionError(str("dense_forward: input has ", x.cols(),
                             " features, layer expects ", layer.in_size()));
  Var y = add_bias(matmul(x, transpose(b(layer.weight))), b(layer.bias));
  switch (layer.activation) {
    case Activation::kNone: return y;
    case Activation::kRelu: return relu(y);
    case Activation::kSoftmax: return softmax_rows(y);
  }
  return y;
}

Matrix dropout_mask(Index rows, Index cols, Scalar keep, Rng& rng) {
  if (!(keep > 0.0) || keep > 1.0)
    throw ConfigError(str("dropout: keep probability must be in (0, 1], got ",
                          keep));
  std::bernoulli_distribution coin(keep);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      m(i, j) = coin(rng) ? 1.0 / keep : 0.0;
  return m;
}

Var dropout_apply(const DropoutSpec& spec, const Var& x, Rng& rng) {
  if (!(spec.keep_probability > 0.0) || spec.keep_probability > 1.0)
    throw ConfigError(str("dropout: keep probability must be in (0, 1], got ",
                          spec.keep_probability));
  if (!spec.train || spec.keep_probability == 1.0) return x;
  Matrix mask = dropout_mask(x.rows(), x.cols(), spec.keep_probability, rng);
  return mul(x, x.tape()->constant(std::move(mask)));
}

BatchNorm::BatchNorm(Index features, Scalar eps, Scalar mom)
    : gamma("gamma", Matrix::Ones(1, features)),
      beta("beta", Matrix::Zero(1, features)),
      running_mean(RowVector::Zero(features)),
      running_var(RowVector::Ones(features)),
      epsilon(eps),
      momentum(mom) {
  if (eps <= 0.0) throw ConfigError(str("batchnorm: epsilon must be > 0"));
  if (!(mom > 0.0 && mom < 1.0))
    throw ConfigError(str("batchnorm: momentum must be in (0, 1), got ", mom));
}

Var batchnorm_forward(Binder& b, BatchNorm& bn, const Var& x, bool train) {
  if (x.cols() != bn.features())
    throw DimensionError(str("batchnorm: input has ", x.cols(),
                             " features, expected ", bn.features()));
  Tape& t = b.tape();
  if (train) {
    if (x.rows() < 2)
      throw ContractError(
          str("batchnorm: train mode needs batch >= 2, got ", x.rows()));
    RowVector mu = x.value().colwise().mean();
    RowVector var =
        (x.value().rowwise() - mu).array().square().colwise().mean();
    bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mu;
    bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * var;
    return batchnorm_train(x, b(bn.gamma), b(bn.beta), bn.epsilon);
  }
  RowVector invstd = (bn.running_var.array() + bn.epsilon).rsqrt();
  Var s = mul(b(bn.gamma), t.constant(invstd));
  Var c = sub(b(bn.beta), mul(s, t.constant(Matrix(bn.running_mean))));
  return rows_affine(x, s, c);
}

namespace {

Matrix lstm_bias_init(Index hidden) {
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();  // forget gate
  return b;
}

}  // namespace

LstmCell::LstmCell(Index input_size, Index hidden_size)
    : w_input("w_input", Matrix::Zero(4 * hidden_size, input_size)),
      w_hidden("w_hidden", Matrix::Zero(4 * hidden_size, hidden_size)),
      bias("bias", lstm_bias_init(hidden_size)) {}

LstmCell::LstmCell(Index input_size, Index hidden_size, Rng& rng)
    : w_input("w_input", glorot_uniform(4 * hidden_size, input_size, rng)),
      w_hidden("w_hidden", glorot_uniform(4 * hidden_size, hidden_size, rng)),
      bias("bias", lstm_bias_init(hidden_size)) {}

Index LstmCell::param_count() const {
  return w_input.value.size() + w_hidden.value.size() + bias.value.size();
}

Lstm::Lstm(Index input_size, Index hidden_size, const LstmOptions& opts,
           Rng& rng)
    : options(opts) {
  if (opts.num_layers < 1 || opts.num_layers > 2)
    throw ConfigError(str("lstm: num_layers must be 1 or 2, got ",
                          opts.num_layers));
  int dirs = opts.bidirectional ? 2 : 1;
  for (int layer = 0; layer < opts.num_layers; ++layer) {
    Index in = layer == 0 ? input_size : hidden_size * dirs;
    for (int d = 0; d < dirs; ++d) cells.emplace_back(in, hidden_size, rng);
  }
}

Index Lstm::output_size() const {
  return hidden_size() * (options.bidirectional ? 2 : 1);
}

std::vector<Param*> Lstm::params() {
  std::vector<Param*> out;
  for (LstmCell& c : cells)
    for (Param* p : c.params()) out.push_back(p);
  return out;
}

namespace {

struct BoundCell {
  Var w_input_t;   // transposed once per tape
  Var w_hidden_t;
  Var bias;
  Index hidden;
};

BoundCell bind_cell(Binder& b, LstmCell& cell) {
  return {transpose(b(cell.w_input)), transpose(b(cell.w_hidden)),
          b(cell.bias), cell.hidden_size()};
}

// One direction over the given step inputs; returns all step outputs.
std::vector<Var> run_direction(Binder& b, const BoundCell& cell,
                               const std::vector<Var>& steps, bool reverse,
                               const Matrix* mask) {
  Tape& t = b.tape();
  Index h = cell.hidden;
  Var hidden = t.constant(Matrix::Zero(1, h));
  Var cell_state = t.constant(Matrix::Zero(1, h));
  Var mask_var;
  if (mask) mask_var = t.constant(*mask);
  std::vector<Var> outputs(steps.size());
  for (std::size_t k = 0; k < steps.size(); ++k) {
    std::size_t idx = reverse ? steps.size() - 1 - k : k;
    Var z = add_bias(add(matmul(steps[idx], cell.w_input_t),
                         matmul(hidden, cell.w_hidden_t)),
                     cell.bias);
    Var in_gate = sigmoid(slice_cols(z, 0, h));
    Var forget_gate = sigmoid(slice_cols(z, h, h));
    Var candidate = tanh(slice_cols(z, 2 * h, h));
    Var out_gate = sigmoid(slice_cols(z, 3 * h, h));
    cell_state = add(mul(forget_gate, cell_state), mul(in_gate, candidate));
    hidden = mul(out_gate, tanh(cell_state));
    if (mask) hidden = mul(hidden, mask_var);
    outputs[idx] = hidden;
  }
  return outputs;
}

}  // namespace

Var lstm_sequence_forward(Binder& b, Lstm& lstm, const Var& sequence,
                          bool train, Rng* rng) {
  Index steps = sequence.rows();
  if (steps < 1) throw ContractError("lstm_sequence_forward: empty sequence");
  if (steps > lstm.options.max_length)
    throw ContractError(str("lstm_sequence_forward: sequence length ", steps,
                            " exceeds configured maximum ",
                            lstm.options.max_length));
  if (sequence.cols() != lstm.cells.front().input_size())
    throw DimensionError(str("lstm_sequence_forward: step size ",
                             sequence.cols(), ", cell expects ",
                             lstm.cells.front().input_size()));
  bool drop = train && lstm.options.dropout_keep < 1.0;
  if (drop && rng == nullptr)
    throw ContractError("lstm_sequence_forward: dropout requires an rng");

  std::vector<Var> inputs(steps);
  for (Index r = 0; r < steps; ++r)
    inputs[r] = block(sequence, r, 0, 1, sequence.cols());

  int dirs = lstm.options.bidirectional ? 2 : 1;
  Index h = lstm.hidden_size();
  std::vector<Var> finals;
  for (int layer = 0; layer < lstm.options.num_layers; ++layer) {
    std::vector<std::vector<Var>> per_dir(dirs);
    finals.clear();
    for (int d = 0; d < dirs; ++d) {
      LstmCell& cell = lstm.cells[layer * dirs + d];
      BoundCell bound = bind_cell(b, cell);
      Matrix mask;
      if (drop)
        mask = dropout_mask(1, h, lstm.options.dropout_keep, *rng);
      per_dir[d] = run_direction(b, bound, inputs, /*reverse=*/d == 1,
                                 drop ? &mask : nullptr);
      finals.push_back(per_dir[d][d == 1 ? 0 : steps - 1]);
    }
    if (layer + 1 < lstm.options.num_layers) {
      // Next layer consumes per-step outputs (both directions concatenated).
      std::vector<Var> next(steps);
      for (Index r = 0; r < steps; ++r) {
        if (dirs == 1) {
          next[r] = per_dir[0][r];
        } else {
          std::vector<Var> parts{per_dir[0][r], per_dir[1][r]};
          next[r] = concat_cols(parts);
        }
      }
      inputs = std::move(next);
    }
  }
  if (finals.size() == 1) return finals[0];
  return concat_cols(finals);
}

Sgd::Sgd(const SgdOptions& opts) : opts_(opts) {
  if (!(opts.learning_rate > 0.0))
    throw ConfigError(str("sgd: learning rate must be > 0, got ",
                          opts.learning_rate));
  if (opts.momentum < 0.0 || opts.momentum >= 1.0)
    throw ConfigError(str("sgd: momentum must be in [0, 1), got ",
                          opts.momentum));
  if (opts.weight_decay < 0.0)
    throw ConfigError(str("sgd: weight decay must be >= 0, got ",
                          opts.weight_decay));
}

void Sgd::step(std::span<const std::pair<Param*, const Matrix*>> grads) {
  for (const auto& [param, grad] : grads) {
    if (grad == nullptr || grad->size() == 0)
      throw ContractError(str("sgd: missing gradient for '", param->name,
                              "'"));
    if (grad->rows() != param->value.rows() ||
        grad->cols() != param->value.cols())
      throw DimensionError(str("sgd: gradient shape ", grad->rows(), "x",
                               grad->cols(), " does not match parameter '",
                               param->name, "'"));
    if (param->velocity.size() == 0)
      param->velocity = Matrix::Zero(param->value.rows(), param->value.cols());
    Matrix update = *grad;
    if (param->decay && opts_.weight_decay > 0.0)
      update += opts_.weight_decay * param->value;
    param->velocity = opts_.momentum * param->velocity + update;
    param->value -= opts_.learning_rate * param->velocity;
  }
}

void Sgd::step(Binder& b) {
  auto grads = b.grads();
  step(grads);
}

GradCheckReport grad_check_model(
    std::span<Param* const> params,
    const std::function<Var(Binder&)>& build_loss, double tolerance,
    double step) {
  std::vector<Matrix*> values;
  values.reserve(params.size());
  for (Param* p : params) values.push_back(&p->value);
  return grad_check_params(
      [&](Tape& tape, std::span<Var> leaves) -> Var {
        Binder b(tape);
        for (std::size_t k = 0; k < params.size(); ++k)
          b.preload(*params[k], leaves[k]);
        return build_loss(b);
      },
      values, tolerance, step);
}

}  // namespace tmf
