#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "tmf/checkpoint.hpp"
#include "tmf/layers.hpp"

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

TEST_CASE("dense_forward: identity and bias-only layers") {
  DenseLayer id(3, 3, Activation::kNone);
  id.weight.value = Matrix::Identity(3, 3);
  Rng rng(1);
  Matrix x = random_matrix(4, 3, rng);
  {
    Tape t;
    Binder b(t);
    Var y = dense_forward(b, id, t.constant(x));
    CHECK(y.value().isApprox(x));
  }

  DenseLayer biased(3, 2, Activation::kRelu);
  biased.bias.value << -0.5, 2.0;
  {
    Tape t;
    Binder b(t);
    Var y = dense_forward(b, biased, t.constant(x));
    for (Index r = 0; r < 4; ++r) {
      CHECK(y.value()(r, 0) == 0.0);
      CHECK(y.value()(r, 1) == doctest::Approx(2.0));
    }
  }

  Tape t;
  Binder b(t);
  CHECK_THROWS_AS(dense_forward(b, id, t.constant(Matrix::Zero(2, 5))),
                  DimensionError);
}

TEST_CASE("dense_forward: gradients pass grad_check") {
  Rng rng(3);
  DenseLayer layer(4, 3, Activation::kRelu, rng);
  Matrix x = random_matrix(2, 4, rng);
  auto params = layer.params();
  auto report = grad_check_model(
      params,
      [&](Binder& b) {
        Var y = dense_forward(b, layer, b.tape().constant(x));
        return sum(mul(y, y));
      },
      1e-4);
  CHECK_MESSAGE(report.pass, report.worst_entry, " rel ",
                report.worst_rel_error);
}

TEST_CASE("dropout: identity cases and expectation preservation") {
  Rng rng(7);
  Tape t;
  Var x = t.constant(Matrix::Ones(10, 10));
  Var same = dropout_apply({.keep_probability = 1.0, .train = true}, x, rng);
  CHECK(same.value().isApprox(Matrix::Ones(10, 10)));
  Var inf = dropout_apply({.keep_probability = 0.3, .train = false}, x, rng);
  CHECK(inf.value().isApprox(Matrix::Ones(10, 10)));
  CHECK_THROWS_AS(
      dropout_apply({.keep_probability = 0.0, .train = true}, x, rng),
      ConfigError);

  // keep 0.5 over 1e5 ones: each output entry has variance 1, so the mean
  // lands within 3 standard errors of 1 (SE = 1/sqrt(1e5)).
  Tape t2;
  Var ones = t2.constant(Matrix::Ones(1, 100000));
  Var dropped =
      dropout_apply({.keep_probability = 0.5, .train = true}, ones, rng);
  Scalar mean = dropped.value().mean();
  CHECK(std::abs(mean - 1.0) < 3.0 / std::sqrt(100000.0));
}

TEST_CASE("dropout: inverted scaling preserves expectation across keep rates") {
  Rng rng(11);
  for (Scalar keep : {0.25, 0.5, 0.95}) {
    Scalar total = 0.0;
    const int masks = 10000;
    const Index n = 100;
    for (int i = 0; i < masks; ++i)
      total += dropout_mask(1, n, keep, rng).sum() / n;
    CHECK(std::abs(total / masks - 1.0) < 0.01);
  }
}

TEST_CASE("lstm: zero parameters force a zero final state") {
  Lstm lstm;
  lstm.cells.emplace_back(3, 4);
  lstm.cells.front().bias.value.setZero();
  Rng rng(5);
  Tape t;
  Binder b(t);
  Var out = lstm_sequence_forward(b, lstm, t.constant(random_matrix(6, 3, rng)));
  CHECK(out.value().isZero());
  CHECK(out.cols() == 4);
}

TEST_CASE("lstm: T=1 equals a single cell step") {
  Rng rng(9);
  Lstm lstm(3, 4, {}, rng);
  Matrix x = random_matrix(1, 3, rng);

  Tape t;
  Binder b(t);
  Var out = lstm_sequence_forward(b, lstm, t.constant(x));

  // Manual step at h = c = 0.
  const LstmCell& cell = lstm.cells.front();
  RowVector z = (x * cell.w_input.value.transpose()) + cell.bias.value;
  auto sig = [](Scalar v) { return 1.0 / (1.0 + std::exp(-v)); };
  RowVector expected(4);
  for (Index j = 0; j < 4; ++j) {
    Scalar in_gate = sig(z(j));
    Scalar candidate = std::tanh(z(8 + j));
    Scalar out_gate = sig(z(12 + j));
    expected(j) = out_gate * std::tanh(in_gate * candidate);
  }
  CHECK(out.value().row(0).isApprox(expected, 1e-12));
}

TEST_CASE("lstm: empty and over-long sequences are rejected") {
  Rng rng(2);
  Lstm lstm(3, 2, {.max_length = 5}, rng);
  Tape t;
  Binder b(t);
  CHECK_THROWS_AS(lstm_sequence_forward(b, lstm, t.constant(Matrix::Zero(0, 3))),
                  ContractError);
  CHECK_THROWS_AS(lstm_sequence_forward(b, lstm, t.constant(Matrix::Zero(6, 3))),
                  ContractError);
}

TEST_CASE("lstm: gradients pass grad_check for T=5") {
  Rng rng(13);
  Lstm lstm(3, 4, {}, rng);
  Matrix seq = random_matrix(5, 3, rng);
  auto params = lstm.params();
  auto report = grad_check_model(
      params,
      [&](Binder& b) {
        Var h = lstm_sequence_forward(b, lstm, b.tape().constant(seq));
        return sum(mul(h, h));
      },
      1e-4);
  CHECK_MESSAGE(report.pass, report.worst_entry, " rel ",
                report.worst_rel_error);
}

TEST_CASE("lstm: bidirectional two-layer variant runs and differentiates") {
  Rng rng(17);
  Lstm lstm(3, 4, {.bidirectional = true, .num_layers = 2}, rng);
  CHECK(lstm.cells.size() == 4);
  CHECK(lstm.output_size() == 8);
  Matrix seq = random_matrix(4, 3, rng);
  auto params = lstm.params();
  auto report = grad_check_model(
      params,
      [&](Binder& b) {
        Var h = lstm_sequence_forward(b, lstm, b.tape().constant(seq));
        return sum(mul(h, h));
      },
      1e-4);
  CHECK(report.pass);
}

TEST_CASE("lstm: repeated forward on the same sequence is bit-identical") {
  Rng rng(19);
  Lstm lstm(3, 5, {}, rng);
  Matrix seq = random_matrix(7, 3, rng);
  Matrix a, b_;
  for (int run = 0; run < 2; ++run) {
    Tape t;
    Binder b(t);
    Var h = lstm_sequence_forward(b, lstm, t.constant(seq));
    (run == 0 ? a : b_) = h.value();
  }
  CHECK((a.array() == b_.array()).all());
}

TEST_CASE("lstm: paper-sized heads have the exact parameter counts") {
  {
    LstmCell vgg(4096, 2230);
    CHECK(vgg.param_count() == Index(4) * 2230 * (4096 + 2230 + 1));
  }
  {
    LstmCell c3d(4096, 1324);
    CHECK(c3d.param_count() == Index(4) * 1324 * (4096 + 1324 + 1));
  }
}

TEST_CASE("batchnorm: standardization, constant column, gradients") {
  Rng rng(23);
  BatchNorm bn(3);
  Matrix x = random_matrix(16, 3, rng, -2.0, 5.0);
  x.col(2).setConstant(4.2);  // constant feature
  bn.beta.value << 0.0, 0.0, 7.0;
  {
    Tape t;
    Binder b(t);
    Var y = batchnorm_forward(b, bn, t.constant(x), /*train=*/true);
    for (Index j = 0; j < 2; ++j) {
      Scalar mean = y.value().col(j).mean();
      Scalar var = (y.value().col(j).array() - mean).square().mean();
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
    // Constant column collapses to the shift.
    CHECK((y.value().col(2).array() - 7.0).abs().maxCoeff() < 1e-6);
    CHECK((bn.running_var.array() >= 0.0).all());
  }
  {
    Tape t;
    Binder b(t);
    CHECK_THROWS_AS(
        batchnorm_forward(b, bn, t.constant(Matrix::Zero(1, 3)), true),
        ContractError);
  }
  auto params = bn.params();
  auto report = grad_check_model(
      params,
      [&](Binder& b) {
        Var y = batchnorm_forward(b, bn, b.tape().constant(x), true);
        return sum(mul(y, y));
      },
      1e-3);
  CHECK(report.pass);
}

TEST_CASE("batchnorm: inference uses running statistics") {
  Rng rng(29);
  BatchNorm bn(2, 1e-5, 0.5);
  Matrix x = random_matrix(8, 2, rng);
  {
    Tape t;
    Binder b(t);
    batchnorm_forward(b, bn, t.constant(x), true);
  }
  Tape t;
  Binder b(t);
  Matrix one = random_matrix(1, 2, rng);
  Var y = batchnorm_forward(b, bn, t.constant(one), /*train=*/false);
  RowVector expect =
      (one.row(0) - bn.running_mean).array() *
          (bn.running_var.array() + bn.epsilon).rsqrt() *
          bn.gamma.value.row(0).array() +
      bn.beta.value.row(0).array();
  CHECK(y.value().row(0).isApprox(expect, 1e-12));
}

TEST_CASE("sgd: plain step, pure decay, quadratic bowl descent") {
  Param p("p", Matrix::Ones(1, 2));
  Matrix g = Matrix::Constant(1, 2, 0.5);
  Sgd plain({.learning_rate = 0.1, .momentum = 0.0, .weight_decay = 0.0});
  std::vector<std::pair<Param*, const Matrix*>> binding{{&p, &g}};
  plain.step(binding);
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5));

  // Zero gradient with decay shrinks geometrically toward zero.
  Param q("q", Matrix::Ones(1, 1), /*decay=*/true);
  Matrix zero = Matrix::Zero(1, 1);
  Sgd decay({.learning_rate = 0.1, .momentum = 0.0, .weight_decay = 0.5});
  std::vector<std::pair<Param*, const Matrix*>> qb{{&q, &zero}};
  Scalar prev = 1.0;
  for (int i = 0; i < 20; ++i) {
    decay.step(qb);
    CHECK(q.value(0, 0) == doctest::Approx(prev * (1.0 - 0.1 * 0.5)));
    prev = q.value(0, 0);
  }

  // Quadratic bowl 0.5 * ||theta - c||^2 with small eta: theta follows the
  // closed form (1 - eta)^t theta0, so the loss decreases monotonically.
  Rng rng(31);
  Param theta("theta", random_matrix(1, 3, rng, 2.0, 3.0));
  Matrix theta0 = theta.value;
  Matrix target = Matrix::Zero(1, 3);
  Sgd opt({.learning_rate = 0.05, .momentum = 0.0, .weight_decay = 0.0});
  auto loss_of = [&] {
    return 0.5 * (theta.value - target).squaredNorm();
  };
  Scalar last = loss_of();
  for (int i = 0; i < 100; ++i) {
    Matrix grad = theta.value - target;
    std::vector<std::pair<Param*, const Matrix*>> tb{{&theta, &grad}};
    opt.step(tb);
    Scalar now = loss_of();
    CHECK(now <= last + 1e-12);
    CHECK(theta.value.isApprox(std::pow(0.95, i + 1) * theta0, 1e-9));
    last = now;
  }

  // With momentum the trajectory overshoots but still converges.
  Param theta_m("theta_m", theta0);
  Sgd opt_m({.learning_rate = 0.05, .momentum = 0.9, .weight_decay = 0.0});
  for (int i = 0; i < 200; ++i) {
    Matrix grad = theta_m.value - target;
    std::vector<std::pair<Param*, const Matrix*>> tb{{&theta_m, &grad}};
    opt_m.step(tb);
  }
  CHECK(0.5 * theta_m.value.squaredNorm() < 1e-3 * 0.5 * theta0.squaredNorm());

  Param no_grad("x", Matrix::Ones(1, 1));
  Matrix empty;
  std::vector<std::pair<Param*, const Matrix*>> bad{{&no_grad, &empty}};
  CHECK_THROWS_AS(plain.step(bad), ContractError);
}

TEST_CASE("layers: twenty random instantiations all pass grad_check") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    DenseLayer dense(3, 4, Activation::kSoftmax, rng);
    Lstm lstm(2, 3, {}, rng);
    BatchNorm bn(3);
    bn.gamma.value = random_matrix(1, 3, rng, 0.5, 1.5);
    bn.beta.value = random_matrix(1, 3, rng);
    Matrix x = random_matrix(3, 3, rng);
    Matrix seq = random_matrix(4, 2, rng);

    std::vector<Param*> params;
    for (Param* p : dense.params()) params.push_back(p);
    for (Param* p : lstm.params()) params.push_back(p);
    for (Param* p : bn.params()) params.push_back(p);
    auto report = grad_check_model(
        params,
        [&](Binder& b) {
          Var a = dense_forward(b, dense, b.tape().constant(x));
          Var h = lstm_sequence_forward(b, lstm, b.tape().constant(seq));
          Var n = batchnorm_forward(b, bn, b.tape().constant(x), true);
          return add(sum(mul(a, a)), add(sum(mul(h, h)), sum(mul(n, n))));
        },
        1e-3);
    CHECK_MESSAGE(report.pass, "seed ", seed, " worst ",
                  report.worst_rel_error, " at ", report.worst_entry);
  }
}

TEST_CASE("checkpoint: round-trip is bit-exact") {
  Rng rng(37);
  ModelRecord m;
  m.name = "head.audio";
  m.kind = "mlp-head";
  m.hparams = {{"input", "1582"}, {"descriptor", "279"}};
  m.blocks.push_back({"fc1.weight", random_matrix(5, 7, rng)});
  m.blocks.push_back({"fc1.bias", random_matrix(1, 5, rng)});

  auto path = std::filesystem::temp_directory_path() / "tmf_ckpt_test.tmf";
  std::vector<ModelRecord> models{m};
  write_checkpoint(path.string(), models);
  auto loaded = read_checkpoint(path.string());
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].name == m.name);
  CHECK(loaded[0].kind == m.kind);
  CHECK(loaded[0].hparam("descriptor") == "279");
  REQUIRE(loaded[0].blocks.size() == 2);
  CHECK((loaded[0].blocks[0].value.array() == m.blocks[0].value.array()).all());
  CHECK((loaded[0].blocks[1].value.array() == m.blocks[1].value.array()).all());
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: bad magic and truncation are format errors") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path();
  auto bad = dir / "tmf_bad_magic.tmf";
  {
    std::ofstream os(bad);
    os << "NOPE\n";
  }
  CHECK_THROWS_AS(read_checkpoint(bad.string()), FormatError);

  auto trunc = dir / "tmf_truncated.tmf";
  {
    std::ofstream os(trunc, std::ios::binary);
    os << "TMF1\nmodel m k\nblock w 2 2\nend\n";
    double one = 1.0;
    os.write(reinterpret_cast<const char*>(&one), sizeof(one));
  }
  CHECK_THROWS_AS(read_checkpoint(trunc.string()), FormatError);
  fs::remove(bad);
  fs::remove(trunc);
}
