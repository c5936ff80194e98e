#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "tmf/autodiff.hpp"
#include "tmf/grad_check.hpp"

using namespace tmf;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, Scalar lo = -1.0,
                     Scalar hi = 1.0) {
  std::uniform_real_distribution<Scalar> dist(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace

TEST_CASE("matmul: identity and forced arithmetic") {
  Tape t;
  Matrix i2 = Matrix::Identity(2, 2);
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  Var out = matmul(t.constant(i2), t.constant(a));
  CHECK(out.value().isApprox(a));

  Matrix row(1, 2), col(2, 1);
  row << 1, 2;
  col << 3, 4;
  Var prod = matmul(t.constant(row), t.constant(col));
  CHECK(prod.rows() == 1);
  CHECK(prod.cols() == 1);
  CHECK(prod.value()(0, 0) == doctest::Approx(11.0));
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tape t;
  Var a = t.constant(Matrix::Zero(2, 3));
  Var b = t.constant(Matrix::Zero(4, 5));
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       "matmul: inner dimensions disagree (2x3 vs 4x5)",
                       DimensionError);
}

TEST_CASE("matmul: gradient of sum(A*B) matches finite differences") {
  Rng rng(42);
  std::vector<Matrix> point{random_matrix(3, 3, rng), random_matrix(3, 3, rng)};
  auto report = grad_check(
      [](Tape&, std::span<const Var> in) {
        return sum(matmul(in[0], in[1]));
      },
      point, 1e-4);
  CHECK_MESSAGE(report.pass, report.worst_entry, " rel ",
                report.worst_rel_error);
}

TEST_CASE("elementwise: definitions") {
  Tape t;
  Matrix x(1, 3);
  x << -1, 0, 2;
  Var r = relu(t.constant(x));
  CHECK(r.value()(0, 0) == 0.0);
  CHECK(r.value()(0, 1) == 0.0);
  CHECK(r.value()(0, 2) == 2.0);

  Var s = sigmoid(t.scalar(0.0));
  CHECK(s.value()(0, 0) == doctest::Approx(0.5));

  CHECK_THROWS_AS(log(t.scalar(-1.0)), DomainError);
  CHECK_THROWS_AS(log(t.scalar(0.0)), DomainError);
}

TEST_CASE("elementwise: tanh gradient matches finite differences") {
  Matrix x(1, 2);
  x << 0.3, -0.7;
  std::vector<Matrix> point{x};
  auto report = grad_check(
      [](Tape&, std::span<const Var> in) { return sum(tanh(in[0])); },
      point, 1e-4);
  CHECK(report.pass);
}

TEST_CASE("softmax: symmetry, stability, high-precision oracle") {
  Tape t;
  Var uniform = softmax(t.constant(Matrix::Zero(1, 7)));
  for (Index j = 0; j < 7; ++j)
    CHECK(uniform.value()(0, j) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));

  Matrix big(1, 2);
  big << 1000, 0;
  Var stable = softmax(t.constant(big));
  CHECK(std::isfinite(stable.value()(0, 0)));
  CHECK(stable.value()(0, 0) == doctest::Approx(1.0));
  CHECK(stable.value()(0, 1) == doctest::Approx(0.0));

  // Direct evaluation at extended precision.
  Matrix z(1, 3);
  z << 1, 2, 3;
  long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
  long double denom = e1 + e2 + e3;
  Var p = softmax(t.constant(z));
  CHECK(std::abs(p.value()(0, 0) - double(e1 / denom)) < 1e-9);
  CHECK(std::abs(p.value()(0, 1) - double(e2 / denom)) < 1e-9);
  CHECK(std::abs(p.value()(0, 2) - double(e3 / denom)) < 1e-9);
}

TEST_CASE("softmax: sums to one and shift invariance") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix z = random_matrix(1, 7, rng, -5.0, 5.0);
    Tape t;
    Var p = softmax(t.constant(z));
    CHECK(std::abs(p.value().sum() - 1.0) < 1e-6);
    Matrix shifted = z.array() + 3.7;
    Var q = softmax(t.constant(shifted));
    CHECK((p.value() - q.value()).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("cross_entropy: uniform loss and p-minus-onehot adjoint") {
  Tape t;
  Var p = softmax(t.constant(Matrix::Zero(1, 7)));
  Var loss = cross_entropy(p, 0);
  CHECK(loss.value()(0, 0) == doctest::Approx(std::log(7.0)));

  // Composite adjoint w.r.t. logits at equal logits, target 0.
  Tape t2;
  Var logits = t2.leaf(Matrix::Zero(1, 7), true);
  Var l = cross_entropy(softmax(logits), 0);
  t2.backward(l);
  Matrix g = logits.grad();
  CHECK(g(0, 0) == doctest::Approx(1.0 / 7.0 - 1.0));
  for (Index j = 1; j < 7; ++j)
    CHECK(g(0, j) == doctest::Approx(1.0 / 7.0));

  CHECK_THROWS_AS(cross_entropy(p, 7), IndexError);
  CHECK_THROWS_AS(cross_entropy(p, -1), IndexError);
}

TEST_CASE("cross_entropy: adjoint matches finite differences at random logits") {
  Rng rng(11);
  std::vector<Matrix> point{random_matrix(1, 7, rng, -2.0, 2.0)};
  auto report = grad_check(
      [](Tape&, std::span<const Var> in) {
        return cross_entropy(softmax(in[0]), 3);
      },
      point, 1e-4);
  CHECK_MESSAGE(report.pass, "worst ", report.worst_rel_error);
}

TEST_CASE("fused softmax cross entropy equals composed ops") {
  Rng rng(13);
  Matrix z = random_matrix(4, 7, rng, -3.0, 3.0);
  std::vector<int> targets{0, 3, 6, 2};
  std::vector<Scalar> weights{0.5, 1.0, 0.25, 2.0};

  Tape t;
  Var zf = t.leaf(z, true);
  Var fused = softmax_cross_entropy_rows(zf, targets, weights);

  Scalar expected = 0.0;
  for (Index r = 0; r < 4; ++r) {
    Tape t2;
    Var p = softmax(t2.constant(Matrix(z.row(r))));
    expected += weights[r] * cross_entropy(p, targets[r]).value()(0, 0);
  }
  CHECK(fused.value()(0, 0) == doctest::Approx(expected).epsilon(1e-12));

  std::vector<Matrix> point{z};
  auto report = grad_check(
      [&](Tape&, std::span<const Var> in) {
        return softmax_cross_entropy_rows(in[0], targets, weights);
      },
      point, 1e-4);
  CHECK(report.pass);
}

TEST_CASE("backward: trivial and unreachable leaves") {
  Tape t;
  Var a = t.leaf(Matrix::Ones(2, 3), true);
  Var b = t.leaf(Matrix::Ones(2, 3), true);
  Var loss = sum(a);
  t.backward(loss);
  CHECK(a.grad().isApprox(Matrix::Ones(2, 3)));
  CHECK(b.grad().isZero());

  CHECK_THROWS_AS(t.backward(a), ContractError);
}

TEST_CASE("backward: two-layer network gradients match finite differences") {
  Rng rng(99);
  // x(1x4) -> relu(x W1^T + b1)(1x5) -> softmax(h W2^T + b2)(1x3)
  std::vector<Matrix> point{
      random_matrix(5, 4, rng), random_matrix(1, 5, rng),
      random_matrix(3, 5, rng), random_matrix(1, 3, rng)};
  Matrix x = random_matrix(1, 4, rng);
  auto report = grad_check(
      [&](Tape& t, std::span<const Var> in) {
        Var xv = t.constant(x);
        Var h = relu(add_bias(matmul(xv, transpose(in[0])), in[1]));
        Var logits = add_bias(matmul(h, transpose(in[2])), in[3]);
        return cross_entropy(softmax(logits), 1);
      },
      point, 1e-4);
  CHECK_MESSAGE(report.pass, report.worst_entry, " rel ",
                report.worst_rel_error);
}

TEST_CASE("backward: deterministic across repeated runs") {
  Rng rng(5);
  Matrix a = random_matrix(3, 3, rng);
  Matrix b = random_matrix(3, 3, rng);
  Matrix g1, g2;
  for (int run = 0; run < 2; ++run) {
    Tape t;
    Var av = t.leaf(a, true);
    Var bv = t.leaf(b, true);
    Var loss = sum(mul(tanh(matmul(av, bv)), sigmoid(av)));
    t.backward(loss);
    (run == 0 ? g1 : g2) = av.grad();
  }
  CHECK((g1.array() == g2.array()).all());
}

TEST_CASE("grad_check: linear function is exact to roundoff") {
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  std::vector<Matrix> point{x};
  auto report = grad_check(
      [](Tape&, std::span<const Var> in) {
        return sum(scale(in[0], 2.5));
      },
      point, 1e-4);
  CHECK(report.pass);
  CHECK(report.worst_rel_error < 1e-10);
}

TEST_CASE("grad_check: flags a corrupted gradient") {
  // The first build (the analytic pass) sees a different function than the
  // finite-difference evaluations, which is indistinguishable from a wrong
  // adjoint.
  Matrix x(1, 3);
  x << 0.2, -0.4, 0.9;
  std::vector<Matrix> point{x};
  int calls = 0;
  auto report = grad_check(
      [&calls](Tape&, std::span<const Var> in) {
        ++calls;
        Var base = sum(tanh(in[0]));
        return calls == 1 ? base : scale(base, 1.01);
      },
      point, 1e-4);
  CHECK_FALSE(report.pass);
}

TEST_CASE("every primitive passes finite-difference checks on 100 seeds") {
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Matrix a = random_matrix(2, 3, rng);
    Matrix b = random_matrix(2, 3, rng);
    Matrix m = random_matrix(3, 2, rng);
    Matrix pos = random_matrix(2, 3, rng, 0.1, 2.0);
    Matrix bias = random_matrix(1, 3, rng);
    Matrix batch = random_matrix(4, 3, rng);

    struct NamedCase {
      const char* name;
      LossBuilder build;
      std::vector<Matrix> point;
      double tol = 1e-4;
    };
    std::vector<NamedCase> cases;
    cases.push_back({"matmul+transpose",
                     [](Tape&, std::span<const Var> in) {
                       return sum(matmul(in[0], transpose(in[1])));
                     },
                     {a, b}});
    cases.push_back({"add/sub/mul/scale",
                     [](Tape&, std::span<const Var> in) {
                       Var c = add(in[0], in[1]);
                       c = sub(c, scale(in[1], 0.3));
                       return sum(mul(c, in[0]));
                     },
                     {a, b}});
    cases.push_back({"scalar broadcast",
                     [](Tape&, std::span<const Var> in) {
                       return sum(mul(add(in[0], in[1]), in[1]));
                     },
                     {a, Matrix::Constant(1, 1, 0.7)}});
    cases.push_back({"activations",
                     [](Tape&, std::span<const Var> in) {
                       return sum(add(tanh(in[0]), sigmoid(in[0])));
                     },
                     {a}});
    cases.push_back({"exp/log",
                     [](Tape&, std::span<const Var> in) {
                       return sum(log(exp(in[0])));
                     },
                     {pos}});
    cases.push_back({"add_bias",
                     [](Tape&, std::span<const Var> in) {
                       return sum(tanh(add_bias(in[0], in[1])));
                     },
                     {batch, bias}});
    cases.push_back({"rows_affine",
                     [](Tape&, std::span<const Var> in) {
                       return sum(rows_affine(in[0], in[1], in[2]));
                     },
                     {batch, bias, bias}});
    cases.push_back({"block+concat",
                     [](Tape&, std::span<const Var> in) {
                       Var left = slice_cols(in[0], 0, 2);
                       Var right = slice_cols(in[0], 1, 2);
                       std::vector<Var> parts{left, right};
                       return sum(tanh(concat_cols(parts)));
                     },
                     {a}});
    cases.push_back({"frobenius_norm",
                     [](Tape&, std::span<const Var> in) {
                       return frobenius_norm(in[0]);
                     },
                     {m}});
    cases.push_back({"softmax_rows",
                     [](Tape&, std::span<const Var> in) {
                       return sum(mul(softmax_rows(in[0]), in[1]));
                     },
                     {a, b}});
    // Looser bound: the batch-coupled statistics amplify differencing noise.
    cases.push_back({"batchnorm",
                     [](Tape&, std::span<const Var> in) {
                       Var y = batchnorm_train(in[0], in[1], in[2], 1e-5);
                       return sum(mul(y, y));
                     },
                     {batch, bias.array().abs().matrix(), bias},
                     1e-3});

    for (auto& c : cases) {
      auto report = grad_check(c.build, c.point, c.tol);
      CHECK_MESSAGE(report.pass, c.name, " seed ", seed, " worst ",
                    report.worst_rel_error, " at ", report.worst_entry);
    }
  }
}

TEST_CASE("relu subgradient at zero is zero") {
  Tape t;
  Var x = t.leaf(Matrix::Zero(1, 3), true);
  Var loss = sum(relu(x));
  t.backward(loss);
  CHECK(x.grad().isZero());
}
