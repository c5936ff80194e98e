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

#include "tmf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace tmf {

namespace {

std::string shape_of(const Matrix& m) { return str(m.rows(), "x", m.cols()); }

Tape* require_same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || !b.valid())
    throw ContractError(str(op, ": operand not bound to a tape"));
  if (a.tape() != b.tape())
    throw ContractError(str(op, ": operands live on different tapes"));
  return a.tape();
}

Tape* require_tape(const Var& a, const char* op) {
  if (!a.valid()) throw ContractError(str(op, ": operand not bound to a tape"));
  return a.tape();
}

bool is_scalar(const Var& v) { return v.rows() == 1 && v.cols() == 1; }

// bias-like operands: a vector whose length matches the column count.
RowVector as_row(const Matrix& v, Index cols, const char* op) {
  if (v.rows() == 1 && v.cols() == cols) return v.row(0);
  if (v.cols() == 1 && v.rows() == cols) return v.col(0).transpose();
  throw DimensionError(
      str(op, ": expected a length-", cols, " vector, got ", shape_of(v)));
}

Matrix shaped_like(const Matrix& proto, const RowVector& row) {
  if (proto.rows() == 1) return row;
  return row.transpose();
}

}  // namespace

const Matrix& Var::value() const {
  if (!valid()) throw ContractError("Var::value: unbound handle");
  return tape_->nodes_[id_].value;
}

const Matrix& Var::grad() const {
  if (!valid()) throw ContractError("Var::grad: unbound handle");
  const Matrix& g = tape_->nodes_[id_].grad;
  if (g.size() == 0)
    throw ContractError("Var::grad: no gradient; run Tape::backward first");
  return g;
}

bool Var::requires_grad() const {
  if (!valid()) throw ContractError("Var::requires_grad: unbound handle");
  return tape_->nodes_[id_].requires_grad;
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  return emit(std::move(value), requires_grad, nullptr);
}

Var Tape::scalar(Scalar v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::emit(Matrix value, bool requires_grad,
               std::function<void(Tape&, std::size_t)> backward_fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::acc(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
  n.touched = true;
}

void Tape::backward(const Var& loss) {
  if (!loss.valid() || loss.tape() != this)
    throw ContractError("backward: loss does not belong to this tape");
  if (loss.size() != 1)
    throw ContractError(str("backward: loss must be scalar, got ",
                            loss.rows(), "x", loss.cols()));
  for (Node& n : nodes_) {
    n.grad.resize(0, 0);
    n.touched = false;
  }
  std::size_t root = loss.id();
  nodes_[root].grad = Matrix::Ones(1, 1);
  nodes_[root].touched = true;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.touched && n.backward) n.backward(*this, i);
  }
  // Leaves (and interior nodes) the loss never reached still report a
  // well-defined zero gradient.
  for (Node& n : nodes_) {
    if (n.requires_grad && n.grad.size() == 0)
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
}

void Tape::clear() { nodes_.clear(); }

// ---- primitives ------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape* t = require_same_tape(a, b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError(str("matmul: inner dimensions disagree (",
                             shape_of(a.value()), " vs ", shape_of(b.value()),
                             ")"));
  Matrix out = a.value() * b.value();
  bool rg = a.requires_grad() || b.requires_grad();
  std::size_t ai = a.id(), bi = b.id();
  return t->emit(std::move(out), rg, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    if (t.needs(ai)) t.acc(ai, g * t.val(bi).transpose());
    if (t.needs(bi)) t.acc(bi, t.val(ai).transpose() * g);
  });
}

Var transpose(const Var& a) {
  Tape* t = require_tape(a, "transpose");
  Matrix out = a.value().transpose();
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   t.acc(ai, t.nodes_[self].grad.transpose());
                 });
}

namespace {

enum class Broadcast { kNone, kLeft, kRight };

Broadcast binary_broadcast(const Var& a, const Var& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  if (is_scalar(a)) return Broadcast::kLeft;
  if (is_scalar(b)) return Broadcast::kRight;
  throw DimensionError(str(op, ": shapes disagree (", shape_of(a.value()),
                           " vs ", shape_of(b.value()), ")"));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape* t = require_same_tape(a, b, "add");
  Broadcast bc = binary_broadcast(a, b, "add");
  Matrix out;
  switch (bc) {
    case Broadcast::kNone: out = a.value() + b.value(); break;
    case Broadcast::kLeft: out = b.value().array() + a.value()(0, 0); break;
    case Broadcast::kRight: out = a.value().array() + b.value()(0, 0); break;
  }
  bool rg = a.requires_grad() || b.requires_grad();
  std::size_t ai = a.id(), bi = b.id();
  return t->emit(std::move(out), rg, [ai, bi, bc](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix s;
    if (bc != Broadcast::kNone) {
      s.resize(1, 1);
      s(0, 0) = g.sum();
    }
    t.acc(ai, bc == Broadcast::kLeft ? s : g);
    t.acc(bi, bc == Broadcast::kRight ? s : g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape* t = require_same_tape(a, b, "sub");
  Broadcast bc = binary_broadcast(a, b, "sub");
  Matrix out;
  switch (bc) {
    case Broadcast::kNone: out = a.value() - b.value(); break;
    case Broadcast::kLeft: out = (a.value()(0, 0) - b.value().array()); break;
    case Broadcast::kRight: out = a.value().array() - b.value()(0, 0); break;
  }
  bool rg = a.requires_grad() || b.requires_grad();
  std::size_t ai = a.id(), bi = b.id();
  return t->emit(std::move(out), rg, [ai, bi, bc](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix s;
    if (bc != Broadcast::kNone) {
      s.resize(1, 1);
      s(0, 0) = g.sum();
    }
    t.acc(ai, bc == Broadcast::kLeft ? s : g);
    if (t.needs(bi)) t.acc(bi, bc == Broadcast::kRight ? Matrix(-s) : Matrix(-g));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape* t = require_same_tape(a, b, "mul");
  Broadcast bc = binary_broadcast(a, b, "mul");
  Matrix out;
  switch (bc) {
    case Broadcast::kNone:
      out = a.value().cwiseProduct(b.value());
      break;
    case Broadcast::kLeft: out = b.value() * a.value()(0, 0); break;
    case Broadcast::kRight: out = a.value() * b.value()(0, 0); break;
  }
  bool rg = a.requires_grad() || b.requires_grad();
  std::size_t ai = a.id(), bi = b.id();
  return t->emit(std::move(out), rg, [ai, bi, bc](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& av = t.val(ai);
    const Matrix& bv = t.val(bi);
    if (t.needs(ai)) {
      if (bc == Broadcast::kLeft) {
        Matrix s(1, 1);
        s(0, 0) = g.cwiseProduct(bv).sum();
        t.acc(ai, s);
      } else if (bc == Broadcast::kRight) {
        t.acc(ai, Matrix(g * bv(0, 0)));
      } else {
        t.acc(ai, Matrix(g.cwiseProduct(bv)));
      }
    }
    if (t.needs(bi)) {
      if (bc == Broadcast::kRight) {
        Matrix s(1, 1);
        s(0, 0) = g.cwiseProduct(av).sum();
        t.acc(bi, s);
      } else if (bc == Broadcast::kLeft) {
        t.acc(bi, Matrix(g * av(0, 0)));
      } else {
        t.acc(bi, Matrix(g.cwiseProduct(av)));
      }
    }
  });
}

Var scale(const Var& a, Scalar c) {
  Tape* t = require_tape(a, "scale");
  Matrix out = a.value() * c;
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai, c](Tape& t, std::size_t self) {
                   t.acc(ai, Matrix(t.nodes_[self].grad * c));
                 });
}

Var relu(const Var& a) {
  Tape* t = require_tape(a, "relu");
  Matrix out = a.value().cwiseMax(0.0);
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   const Matrix& g = t.nodes_[self].grad;
                   Matrix d = (t.val(ai).array() > 0.0)
                                  .select(g, Matrix::Zero(g.rows(), g.cols()));
                   t.acc(ai, d);
                 });
}

Var sigmoid(const Var& a) {
  Tape* t = require_tape(a, "sigmoid");
  // 0.5 * (1 + tanh(x/2)) never overflows.
  Matrix out = (0.5 * (a.value().array() * 0.5).tanh() + 0.5).matrix();
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   const Matrix& y = t.val(self);
                   const Matrix& g = t.nodes_[self].grad;
                   Matrix d = g.array() * y.array() * (1.0 - y.array());
                   t.acc(ai, d);
                 });
}

Var tanh(const Var& a) {
  Tape* t = require_tape(a, "tanh");
  Matrix out = a.value().array().tanh().matrix();
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   const Matrix& y = t.val(self);
                   const Matrix& g = t.nodes_[self].grad;
                   Matrix d = g.array() * (1.0 - y.array().square());
                   t.acc(ai, d);
                 });
}

Var exp(const Var& a) {
  Tape* t = require_tape(a, "exp");
  Matrix out = a.value().array().exp().matrix();
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   Matrix d = t.nodes_[self].grad.cwiseProduct(t.val(self));
                   t.acc(ai, d);
                 });
}

Var log(const Var& a) {
  Tape* t = require_tape(a, "log");
  if (!(a.value().array() > 0.0).all())
    throw DomainError("log: non-positive entry in operand");
  Matrix out = a.value().array().log().matrix();
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   Matrix d = t.nodes_[self].grad.cwiseQuotient(t.val(ai));
                   t.acc(ai, d);
                 });
}

Var add_bias(const Var& x, const Var& bias) {
  Tape* t = require_same_tape(x, bias, "add_bias");
  RowVector b = as_row(bias.value(), x.cols(), "add_bias");
  Matrix out = x.value();
  out.rowwise() += b;
  bool rg = x.requires_grad() || bias.requires_grad();
  std::size_t xi = x.id(), bi = bias.id();
  return t->emit(std::move(out), rg, [xi, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    t.acc(xi, g);
    if (t.needs(bi))
      t.acc(bi, shaped_like(t.val(bi), g.colwise().sum()));
  });
}

Var rows_affine(const Var& x, const Var& s, const Var& c) {
  Tape* t = require_same_tape(x, s, "rows_affine");
  require_same_tape(x, c, "rows_affine");
  RowVector sv = as_row(s.value(), x.cols(), "rows_affine");
  RowVector cv = as_row(c.value(), x.cols(), "rows_affine");
  Matrix out = x.value();
  out.array().rowwise() *= sv.array();
  out.rowwise() += cv;
  bool rg = x.requires_grad() || s.requires_grad() || c.requires_grad();
  std::size_t xi = x.id(), si = s.id(), ci = c.id();
  return t->emit(std::move(out), rg, [xi, si, ci](Tape& t, std::size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    RowVector sv = as_row(t.val(si), g.cols(), "rows_affine");
    if (t.needs(xi)) {
      Matrix d = g;
      d.array().rowwise() *= sv.array();
      t.acc(xi, d);
    }
    if (t.needs(si)) {
      RowVector ds = g.cwiseProduct(t.val(xi)).colwise().sum();
      t.acc(si, shaped_like(t.val(si), ds));
    }
    if (t.needs(ci))
      t.acc(ci, shaped_like(t.val(ci), g.colwise().sum()));
  });
}

Var sum(const Var& a) {
  Tape* t = require_tape(a, "sum");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   Scalar g = t.nodes_[self].grad(0, 0);
                   const Matrix& av = t.val(ai);
                   t.acc(ai, Matrix(Matrix::Constant(av.rows(), av.cols(), g)));
                 });
}

Var mean(const Var& a) {
  if (!a.valid()) throw ContractError("mean: operand not bound to a tape");
  if (a.size() == 0) throw ContractError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<Scalar>(a.size()));
}

Var block(const Var& a, Index i0, Index j0, Index p, Index q) {
  Tape* t = require_tape(a, "block");
  if (i0 < 0 || j0 < 0 || p < 1 || q < 1 || i0 + p > a.rows() ||
      j0 + q > a.cols())
    throw DimensionError(str("block: [", i0, ",", i0 + p, ")x[", j0, ",",
                             j0 + q, ") out of a ", a.rows(), "x", a.cols(),
                             " matrix"));
  Matrix out = a.value().block(i0, j0, p, q);
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai, i0, j0, p, q](Tape& t, std::size_t self) {
                   if (!t.needs(ai)) return;
                   const Matrix& av = t.val(ai);
                   Matrix d = Matrix::Zero(av.rows(), av.cols());
                   d.block(i0, j0, p, q) = t.nodes_[self].grad;
                   t.acc(ai, d);
                 });
}

Var slice_cols(const Var& a, Index j0, Index n) {
  return block(a, 0, j0, a.rows(), n);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape* t = require_tape(parts[0], "concat_cols");
  Index rows = parts[0].rows();
  Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_cols");
    if (p.rows() != rows)
      throw DimensionError(str("concat_cols: row counts disagree (", rows,
                               " vs ", p.rows(), ")"));
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Index> widths;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    ids.push_back(p.id());
    widths.push_back(p.cols());
    at += p.cols();
  }
  return t->emit(std::move(out), rg,
                 [ids, widths](Tape& t, std::size_t self) {
                   const Matrix& g = t.nodes_[self].grad;
                   Index at = 0;
                   for (std::size_t k = 0; k < ids.size(); ++k) {
                     if (t.needs(ids[k]))
                       t.acc(ids[k], g.middleCols(at, widths[k]));
                     at += widths[k];
                   }
                 });
}

Var frobenius_norm(const Var& a) {
  Tape* t = require_tape(a, "frobenius_norm");
  Matrix out(1, 1);
  out(0, 0) = a.value().norm();
  std::size_t ai = a.id();
  return t->emit(std::move(out), a.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   Scalar n = t.val(self)(0, 0);
                   if (n <= 0.0) return;  // subgradient 0 at the zero matrix
                   Scalar g = t.nodes_[self].grad(0, 0);
                   t.acc(ai, Matrix(t.val(ai) * (g / n)));
                 });
}

namespace {

RowVector softmax_row(const RowVector& z) {
  Scalar m = z.maxCoeff();
  RowVector e = (z.array() - m).exp();
  return e / e.sum();
}

}  // namespace

Var softmax(const Var& logits) {
  Tape* t = require_tape(logits, "softmax");
  if (logits.size() < 1 || (logits.rows() != 1 && logits.cols() != 1))
    throw DimensionError(str("softmax: expected a vector, got ",
                             shape_of(logits.value())));
  RowVector z = logits.rows() == 1
                    ? RowVector(logits.value().row(0))
                    : RowVector(logits.value().col(0).transpose());
  Matrix out = shaped_like(logits.value(), softmax_row(z));
  std::size_t ai = logits.id();
  return t->emit(std::move(out), logits.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   const Matrix& p = t.val(self);
                   const Matrix& g = t.nodes_[self].grad;
                   Scalar dot = p.cwiseProduct(g).sum();
                   Matrix d = p.cwiseProduct((g.array() - dot).matrix());
                   t.acc(ai, d);
                 });
}

Var softmax_rows(const Var& logits) {
  Tape* t = require_tape(logits, "softmax_rows");
  if (logits.rows() < 1 || logits.cols() < 1)
    throw DimensionError("softmax_rows: empty operand");
  Matrix out = logits.value();
  for (Index r = 0; r < out.rows(); ++r)
    out.row(r) = softmax_row(out.row(r));
  std::size_t ai = logits.id();
  return t->emit(std::move(out), logits.requires_grad(),
                 [ai](Tape& t, std::size_t self) {
                   const Matrix& p = t.val(self);
                   const Matrix& g = t.nodes_[self].grad;
                   Matrix d(p.rows(), p.cols());
                   for (Index r = 0; r < p.rows(); ++r) {
                     Scalar dot = p.row(r).dot(g.row(r));
                     d.row(r) = p.row(r).cwiseProduct(
                         (g.row(r).array() - dot).matrix());
                   }
                   t.acc(ai, d);
                 });
}

Var cross_entropy(const Var& probabilities, Index target_class) {
  Tape* t = require_tape(probabilities, "cross_entropy");
  const Matrix& pv = probabilities.value();
  if (pv.rows() != 1 && pv.cols() != 1)
    throw DimensionError(
        str("cross_entropy: expected a vector, got ", shape_of(pv)));
  Index n = pv.size();
  if (target_class < 0 || target_class >= n)
    throw IndexError(str("cross_entropy: target ", target_class,
                         " out of range [0, ", n, ")"));
  Scalar pt = pv(target_class);
  if (!(pt > 0.0))
    throw DomainError(str("cross_entropy: p[target] = ", pt,
                          " is not positive"));
  Matrix out(1, 1);
  out(0, 0) = -std::log(pt);
  std::size_t ai = probabilities.id();
  return t->emit(std::move(out), probabilities.requires_grad(),
                 [ai, target_class](Tape& t, std::size_t self) {
                   if (!t.needs(ai)) return;
                   const Matrix& pv = t.val(ai);
                   Scalar g = t.nodes_[self].grad(0, 0);
                   Matrix d = Matrix::Zero(pv.rows(), pv.cols());
                   d(target_class) = -g / pv(target_class);
                   t.acc(ai, d);
                 });
}

Var softmax_cross_entropy_rows(const Var& logits, std::span<const int> targets,
                               std::span<const Scalar> weights) {
  Tape* t = require_tape(logits, "softmax_cross_entropy_rows");
  Index batch = logits.rows();
  Index n = logits.cols();
  if (static_cast<Index>(targets.size()) != batch)
    throw DimensionError(str("softmax_cross_entropy_rows: ", targets.size(),
                             " targets for ", batch, " rows"));
  if (!weights.empty() && static_cast<Index>(weights.size()) != batch)
    throw DimensionError(str("softmax_cross_entropy_rows: ", weights.size(),
                             " weights for ", batch, " rows"));
  const Matrix& z = logits.value();
  Matrix probs(batch, n);
  Scalar loss = 0.0;
  std::vector<Scalar> w(batch, 1.0);
  for (Index r = 0; r < batch; ++r) {
    int c = targets[r];
    if (c < 0 || c >= n)
      throw IndexError(str("softmax_cross_entropy_rows: target ", c,
                           " out of range [0, ", n, ") at row ", r));
    if (!weights.empty()) w[r] = weights[r];
    Scalar m = z.row(r).maxCoeff();
    RowVector e = (z.row(r).array() - m).exp();
    Scalar denom = e.sum();
    probs.row(r) = e / denom;
    loss += w[r] * (m + std::log(denom) - z(r, c));
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  std::size_t ai = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return t->emit(
      std::move(out), logits.requires_grad(),
      [ai, probs = std::move(probs), tg = std::move(tg),
       w = std::move(w)](Tape& t, std::size_t self) {
        if (!t.needs(ai)) return;
        Scalar g = t.nodes_[self].grad(0, 0);
        Matrix d = probs;
        for (Index r = 0; r < d.rows(); ++r) {
          d(r, tg[r]) -= 1.0;
          d.row(r) *= g * w[r];
        }
        t.acc(ai, d);
      });
}

Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta,
                    Scalar epsilon) {
  Tape* t = require_same_tape(x, gamma, "batchnorm_train");
  require_same_tape(x, beta, "batchnorm_train");
  if (epsilon <= 0.0)
    throw ConfigError(str("batchnorm_train: epsilon must be > 0, got ",
                          epsilon));
  Index batch = x.rows();
  Index feats = x.cols();
  if (batch < 2)
    throw ContractError(str("batchnorm_train: needs batch >= 2, got ", batch));
  RowVector gv = as_row(gamma.value(), feats, "batchnorm_train");
  RowVector bv = as_row(beta.value(), feats, "batchnorm_train");

  RowVector mu = x.value().colwise().mean();
  Matrix centered = x.value().rowwise() - mu;
  RowVector var = centered.array().square().colwise().mean();
  RowVector invstd = (var.array() + epsilon).rsqrt();
  Matrix xhat = centered.array().rowwise() * invstd.array();
  Matrix out = xhat.array().rowwise() * gv.array();
  out.rowwise() += bv;

  bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return t->emit(
      std::move(out), rg,
      [xi, gi, bi, xhat = std::move(xhat), invstd = std::move(invstd)](
          Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        Index batch = g.rows();
        if (t.needs(bi))
          t.acc(bi, shaped_like(t.val(bi), g.colwise().sum()));
        if (t.needs(gi)) {
          RowVector dg = g.cwiseProduct(xhat).colwise().sum();
          t.acc(gi, shaped_like(t.val(gi), dg));
        }
        if (t.needs(xi)) {
          RowVector gv = as_row(t.val(gi), g.cols(), "batchnorm_train");
          Matrix dxhat = g.array().rowwise() * gv.array();
          RowVector sum_d = dxhat.colwise().sum();
          RowVector sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
          Matrix dx = static_cast<Scalar>(batch) * dxhat;
          dx.rowwise() -= sum_d;
          dx -= (xhat.array().rowwise() * sum_dx.array()).matrix();
          dx.array().rowwise() *=
              (invstd.array() / static_cast<Scalar>(batch));
          t.acc(xi, dx);
        }
      });
}

}  // namespace tmf
