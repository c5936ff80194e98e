#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "tmf/fusion.hpp"

using namespace tmf;

namespace {

Vector scores_for(std::initializer_list<Scalar> v) {
  Vector s(static_cast<Index>(v.size()));
  Index i = 0;
  for (Scalar x : v) s(i++) = x;
  return s;
}

// Sharply peaked but valid score vector.
Vector peaked(int cls, Index classes = kNumClasses, Scalar peak = 0.82) {
  Vector s = Vector::Constant(classes, (1.0 - peak) / Scalar(classes - 1));
  s(cls) = peak;
  return s;
}

Matrix random_matrix(Index r, Index c, Rng& rng, Scalar lo = -1.0,
                     Scalar hi = 1.0) {
  std::uniform_real_distribution<Scalar> dist(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

Vector random_scores(Rng& rng, Index classes = kNumClasses) {
  std::uniform_real_distribution<Scalar> dist(0.0, 1.0);
  Vector s(classes);
  for (Index i = 0; i < classes; ++i) s(i) = dist(rng) + 1e-3;
  return s / s.sum();
}

// Cleanly separable three-modality set: each modality sees a distinct noisy
// prototype per class and a matching peaked score vector.
ModalitySet separable_set(int videos, Rng& rng, Scalar noise = 0.05) {
  ModalitySet set;
  set.modality_names = {"a", "b", "c"};
  set.descriptor_dims = {5, 4, 6};
  std::normal_distribution<Scalar> gauss(0.0, 1.0);
  std::vector<std::vector<Vector>> protos(3);
  for (int m = 0; m < 3; ++m)
    for (int c = 0; c < kNumClasses; ++c) {
      Vector p(set.descriptor_dims[m]);
      for (Index i = 0; i < p.size(); ++i) p(i) = gauss(rng);
      protos[m].push_back(p);
    }
  for (int v = 0; v < videos; ++v) {
    int label = v % kNumClasses;
    set.video_ids.push_back(str("v", v));
    set.labels.push_back(label);
    std::vector<ModalityOutput> outs;
    for (int m = 0; m < 3; ++m) {
      ModalityOutput o;
      o.descriptor = protos[m][label];
      for (Index i = 0; i < o.descriptor.size(); ++i)
        o.descriptor(i) += noise * gauss(rng);
      o.scores = peaked(label);
      outs.push_back(std::move(o));
    }
    set.outputs.push_back(std::move(outs));
  }
  return set;
}

}  // namespace

TEST_CASE("fuse_baseline: agreement, majority, tie-breaking") {
  std::vector<Vector> agree{peaked(3), peaked(3), peaked(3)};
  for (auto mode : {BaselineFusion::kMajority, BaselineFusion::kMean,
                    BaselineFusion::kMax})
    CHECK(fuse_baseline(agree, mode) == 3);

  std::vector<Vector> two_one{peaked(0), peaked(0), peaked(5)};
  CHECK(fuse_baseline(two_one, BaselineFusion::kMajority) == 0);

  // Three-way split: the mean score decides among the tied classes.
  std::vector<Vector> split{scores_for({0.40, 0.35, 0.25}),
                            scores_for({0.30, 0.45, 0.25}),
                            scores_for({0.20, 0.30, 0.50})};
  // votes: one per class; means = [0.30, 0.3667, 0.3333] -> class 1
  CHECK(fuse_baseline(split, BaselineFusion::kMajority) == 1);

  std::vector<Vector> bad{peaked(0), scores_for({0.5, 0.5})};
  CHECK_THROWS_AS(fuse_baseline(bad, BaselineFusion::kMean), DimensionError);
  std::vector<Vector> lone{peaked(0)};
  CHECK_THROWS_AS(fuse_baseline(lone, BaselineFusion::kMean), ContractError);
}

TEST_CASE("fuse_weighted_mean: uniform equals mean, onehot selects, arithmetic") {
  Rng rng(3);
  std::vector<Vector> scores{random_scores(rng), random_scores(rng),
                             random_scores(rng)};
  Vector uniform = Vector::Constant(3, 1.0 / 3.0);
  auto [fused, cls] = fuse_weighted_mean(scores, uniform);
  CHECK(cls == fuse_baseline(scores, BaselineFusion::kMean));

  for (Index k = 0; k < 3; ++k) {
    Vector onehot = Vector::Zero(3);
    onehot(k) = 1.0;
    auto [f, c] = fuse_weighted_mean(scores, onehot);
    Index expect = 0;
    scores[k].maxCoeff(&expect);
    CHECK(c == static_cast<int>(expect));
  }

  std::vector<Vector> pair{scores_for({0.6, 0.4}), scores_for({0.3, 0.7})};
  auto [f2, c2] = fuse_weighted_mean(pair, Vector::Constant(2, 0.5));
  CHECK(f2(0) == doctest::Approx(0.45));
  CHECK(f2(1) == doctest::Approx(0.55));
  CHECK(c2 == 1);

  Vector off(2);
  off << 0.7, 0.4;
  CHECK_THROWS_AS(fuse_weighted_mean(pair, off), ConfigError);
}

TEST_CASE("simplex_grid: candidate counts and membership") {
  auto grid = simplex_grid(2, 0.5);
  REQUIRE(grid.size() == 3);  // (1,0), (0.5,0.5), (0,1)
  for (const Vector& l : grid) CHECK(std::abs(l.sum() - 1.0) < 1e-12);
  auto grid3 = simplex_grid(3, 0.05);
  CHECK(grid3.size() == 231);  // C(22, 2)
  CHECK_THROWS_AS(simplex_grid(2, 0.3), ConfigError);
}

TEST_CASE("search_weighted_mean: finds the predictive modality") {
  Rng rng(7);
  // Modality 0 is perfect; the other two confidently vote for a wrong class.
  ModalitySet val;
  val.modality_names = {"good", "bad1", "bad2"};
  val.descriptor_dims = {2, 2, 2};
  for (int v = 0; v < 42; ++v) {
    int label = v % kNumClasses;
    val.video_ids.push_back(str("v", v));
    val.labels.push_back(label);
    std::vector<ModalityOutput> outs(3);
    for (auto& o : outs) o.descriptor = Vector::Zero(2);
    outs[0].scores = peaked(label);
    outs[1].scores = peaked((label + 1) % kNumClasses);
    outs[2].scores = peaked((label + 3) % kNumClasses);
    val.outputs.push_back(std::move(outs));
  }
  Vector best = search_weighted_mean(val, 0.05);
  Index top = 0;
  best.maxCoeff(&top);
  CHECK(top == 0);
  int correct = 0;
  for (std::size_t v = 0; v < val.num_videos(); ++v)
    if (fuse_weighted_mean(val.scores_of(v), best).second == val.labels[v])
      ++correct;
  CHECK(correct == 42);

  // Identical modalities tie everywhere; the uniform lambda wins.
  ModalitySet clone = val;
  for (std::size_t v = 0; v < clone.num_videos(); ++v) {
    clone.outputs[v][1].scores = clone.outputs[v][0].scores;
    clone.outputs[v][2].scores = clone.outputs[v][0].scores;
  }
  Vector tied = search_weighted_mean(clone, 1.0 / 3.0);
  for (Index k = 0; k < 3; ++k)
    CHECK(tied(k) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("search_weighted_mean: never below the best single modality") {
  Rng rng(11);
  ModalitySet val;
  val.modality_names = {"m0", "m1"};
  val.descriptor_dims = {2, 2};
  for (int v = 0; v < 60; ++v) {
    int label = v % kNumClasses;
    val.video_ids.push_back(str("v", v));
    val.labels.push_back(label);
    std::vector<ModalityOutput> outs(2);
    for (auto& o : outs) o.descriptor = Vector::Zero(2);
    outs[0].scores = (v % 3 == 0) ? random_scores(rng) : peaked(label);
    outs[1].scores = (v % 4 == 0) ? peaked(label) : random_scores(rng);
    val.outputs.push_back(std::move(outs));
  }
  Vector best = search_weighted_mean(val, 0.1);
  auto accuracy = [&](const Vector& lambda) {
    int correct = 0;
    for (std::size_t v = 0; v < val.num_videos(); ++v)
      if (fuse_weighted_mean(val.scores_of(v), lambda).second ==
          val.labels[v])
        ++correct;
    return correct;
  };
  int chosen = accuracy(best);
  for (Index k = 0; k < 2; ++k) {
    Vector vertex = Vector::Zero(2);
    vertex(k) = 1.0;
    CHECK(chosen >= accuracy(vertex));
  }
}

TEST_CASE("gamma schedule: plateau then geometric decay to the floor") {
  GammaSchedule g;
  g.validate();
  CHECK(g.at(0) == doctest::Approx(10.0));
  CHECK(g.at(9) == doctest::Approx(10.0));
  CHECK(g.at(10) == doctest::Approx(10.0));
  CHECK(g.at(11) == doctest::Approx(5.0));
  CHECK(g.at(1000) == doctest::Approx(1e-4));
  for (int t = 1; t <= 100; ++t) CHECK(g.at(t) <= g.at(t - 1));
}

TEST_CASE("proportional_split: tiles the hidden layer") {
  auto split = proportional_split({279, 297, 304}, 256);
  CHECK(split.size() == 3);
  CHECK(split[0] + split[1] + split[2] == 256);
  for (Index h : split) CHECK(h >= 1);
  CHECK(split[0] <= split[1]);
  CHECK(split[1] <= split[2]);
}

TEST_CASE("moddrop: block-diagonal weights preserve unimodal pathways") {
  Rng rng(13);
  ModDropFusion model({3, 4, 2}, 9, rng);
  // Zero every off-diagonal block.
  for (Index k = 0; k < 3; ++k)
    for (Index l = 0; l < 3; ++l)
      if (k != l)
        model.w1.value
            .block(model.row_offset(k), model.col_offset(l),
                   model.hidden_split[k], model.input_dims[l])
            .setZero();
  CHECK(model.offdiagonal_mass() == 0.0);

  Matrix base = random_matrix(1, 9, rng);
  Matrix poked = base;
  poked.middleCols(model.col_offset(1), model.input_dims[1]) =
      random_matrix(1, 4, rng);  // perturb modality 1 only

  auto hidden_of = [&](const Matrix& x) {
    Tape t;
    Binder b(t);
    return Matrix(moddrop_hidden(b, model, t.constant(x)).value());
  };
  Matrix h0 = hidden_of(base);
  Matrix h1 = hidden_of(poked);
  for (Index k = 0; k < 3; ++k) {
    auto b0 = h0.middleCols(model.row_offset(k), model.hidden_split[k]);
    auto b1 = h1.middleCols(model.row_offset(k), model.hidden_split[k]);
    if (k == 1) {
      CHECK((b0.array() != b1.array()).any());
    } else {
      CHECK((b0.array() == b1.array()).all());  // bit-identical
    }
  }
}

TEST_CASE("moddrop: dropping a modality equals zeroing its block") {
  Rng rng(17);
  ModDropFusion model({3, 4, 2}, 9, rng);
  std::vector<Vector> descriptors{Vector::Random(3), Vector::Random(4),
                                  Vector::Random(2)};
  std::vector<Vector> with_zero = descriptors;
  with_zero[1].setZero();
  Vector direct = moddrop_forward(model, with_zero, /*train=*/false);

  // Build the same effect through the drop machinery.
  Matrix row(1, 9);
  row << descriptors[0].transpose(), descriptors[1].transpose(),
      descriptors[2].transpose();
  Matrix dropped = row;
  dropped.middleCols(model.col_offset(1), model.input_dims[1]).setZero();
  Tape t;
  Binder b(t);
  Var s = softmax_rows(moddrop_logits(b, model, t.constant(dropped)));
  CHECK((s.value().row(0).transpose() - direct).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("moddrop: modality drop keeps at least one block per row") {
  Rng rng(19);
  ModDropFusion model({2, 2, 2}, 6, rng, /*drop_prob=*/0.8);
  Matrix inputs = Matrix::Ones(200, 6);
  Matrix dropped = apply_modality_drop(model, inputs, rng);
  int drops = 0;
  for (Index r = 0; r < dropped.rows(); ++r) {
    int kept = 0;
    for (Index k = 0; k < 3; ++k) {
      auto blockv = dropped.row(r).middleCols(model.col_offset(k), 2);
      bool zeroed = blockv.isZero();
      bool intact = (blockv.array() == 1.0).all();
      CHECK((zeroed || intact));
      if (!zeroed) ++kept;
      if (zeroed) ++drops;
    }
    CHECK(kept >= 1);
  }
  CHECK(drops > 0);
}

TEST_CASE("moddrop: full-model gradients pass grad_check") {
  Rng rng(23);
  ModDropFusion model({3, 2, 3}, 7, rng);
  Matrix x = random_matrix(4, 8, rng);
  std::vector<int> targets{0, 2, 5, 6};
  std::vector<Scalar> w(4, 0.25);
  auto params = model.params();
  auto report = grad_check_model(
      params,
      [&](Binder& b) {
        Var logits = moddrop_logits(b, model, b.tape().constant(x));
        return softmax_cross_entropy_rows(logits, targets, w);
      },
      1e-4);
  CHECK_MESSAGE(report.pass, "worst ", report.worst_rel_error, " at ",
                report.worst_entry);
}

TEST_CASE("moddrop_penalty: hand-computed value and zero diagonal gradient") {
  Rng rng(29);
  ModDropFusion model({2, 2}, 4, rng);
  // Block-diagonal: penalty vanishes.
  for (Index k = 0; k < 2; ++k)
    for (Index l = 0; l < 2; ++l)
      if (k != l)
        model.w1.value.block(model.row_offset(k), model.col_offset(l), 2, 2)
            .setZero();
  {
    Tape t;
    Binder b(t);
    CHECK(moddrop_penalty(b, model, 0.3).value()(0, 0) == 0.0);
  }

  // Single off-diagonal block [[3,4],[0,0]]: Frobenius norm 5, gamma 0.1.
  Matrix blk(2, 2);
  blk << 3, 4, 0, 0;
  model.w1.value.block(model.row_offset(0), model.col_offset(1), 2, 2) = blk;
  {
    Tape t;
    Binder b(t);
    Var penalty = moddrop_penalty(b, model, 0.1);
    CHECK(penalty.value()(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    t.backward(penalty);
    Matrix g = b.grads()[0].second ? *b.grads()[0].second : Matrix();
    // Diagonal blocks receive exactly zero gradient.
    for (Index k = 0; k < 2; ++k)
      CHECK(g.block(model.row_offset(k), model.col_offset(k), 2, 2).isZero());
    // The nonzero off-diagonal block gets gamma * W / ||W||.
    Matrix expect = 0.1 * blk / 5.0;
    CHECK(g.block(model.row_offset(0), model.col_offset(1), 2, 2)
              .isApprox(expect, 1e-12));
  }
  CHECK(moddrop_penalty_value(model, 0.1) == doctest::Approx(0.5));
}

TEST_CASE("moddrop_penalty: invariant under modality permutation") {
  Rng rng(31);
  ModDropFusion model({3, 2, 4}, 9, rng);
  Scalar base = moddrop_penalty_value(model, 1.0);

  // Permute modality order (0,1,2) -> (2,0,1) together with the partition.
  std::vector<Index> perm{2, 0, 1};
  ModDropFusion permuted = model;
  permuted.input_dims = {model.input_dims[2], model.input_dims[0],
                         model.input_dims[1]};
  permuted.hidden_split = {model.hidden_split[2], model.hidden_split[0],
                           model.hidden_split[1]};
  permuted.w1.value.setZero();
  for (Index k = 0; k < 3; ++k)
    for (Index l = 0; l < 3; ++l)
      permuted.w1.value.block(permuted.row_offset(k), permuted.col_offset(l),
                              permuted.hidden_split[k],
                              permuted.input_dims[l]) =
          model.w1.value.block(model.row_offset(perm[k]),
                               model.col_offset(perm[l]),
                               model.hidden_split[perm[k]],
                               model.input_dims[perm[l]]);
  CHECK(moddrop_penalty_value(permuted, 1.0) ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("moddrop prox: shrinks and zeroes off-diagonal blocks only") {
  Rng rng(37);
  ModDropFusion model({2, 2}, 4, rng);
  Matrix diag_before =
      model.w1.value.block(model.row_offset(0), model.col_offset(0), 2, 2);
  Scalar off_before = model.offdiagonal_mass();
  CHECK(off_before > 0.0);
  moddrop_offdiagonal_prox(model, 1e-3);
  CHECK(model.offdiagonal_mass() < off_before);
  CHECK(model.w1.value.block(model.row_offset(0), model.col_offset(0), 2, 2)
            .isApprox(diag_before));
  moddrop_offdiagonal_prox(model, 1e9);
  CHECK(model.offdiagonal_mass() == 0.0);
  CHECK(model.diagonal_mass() > 0.0);
}

TEST_CASE("score tree: intermediate sizes are 21 and 21 for three modalities") {
  Rng rng(41);
  ScoreTreeFusion tree({279, 297, 304}, rng);
  auto [mixer_in, final_in] = tree.intermediate_sizes();
  CHECK(mixer_in == 21);
  CHECK(final_in == 21);
}

TEST_CASE("score tree: zero parameters give uniform scores") {
  ScoreTreeFusion tree;
  for (Index d : {Index(5), Index(4), Index(6)})
    tree.feature_classifiers.emplace_back(d, kNumClasses, Activation::kNone);
  for (int k = 0; k < 3; ++k)
    tree.mixers.emplace_back(3 * kNumClasses, kNumClasses, Activation::kNone);
  tree.final_classifier =
      DenseLayer(3 * kNumClasses, kNumClasses, Activation::kNone);
  Rng rng(43);
  std::vector<Vector> descriptors{Vector::Random(5), Vector::Random(4),
                                  Vector::Random(6)};
  std::vector<Vector> scores{random_scores(rng), random_scores(rng),
                             random_scores(rng)};
  Vector out = score_tree_forward(tree, descriptors, scores);
  for (Index c = 0; c < kNumClasses; ++c)
    CHECK(out(c) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("score tree: scores sum to one on 1000 random inputs") {
  Rng rng(47);
  ScoreTreeFusion tree({5, 4, 6}, rng);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Vector> descriptors{Vector::Random(5), Vector::Random(4),
                                    Vector::Random(6)};
    std::vector<Vector> scores{random_scores(rng), random_scores(rng),
                               random_scores(rng)};
    Vector out = tree.num_modalities() == 3
                     ? score_tree_forward(tree, descriptors, scores)
                     : Vector();
    CHECK(std::abs(out.sum() - 1.0) < 1e-6);
    CHECK((out.array() > 0.0).all());
  }
}

TEST_CASE("score tree: argmax invariant to shifting final-stage logits") {
  Rng rng(53);
  ScoreTreeFusion tree({5, 4, 6}, rng);
  std::vector<Vector> descriptors{Vector::Random(5), Vector::Random(4),
                                  Vector::Random(6)};
  std::vector<Vector> scores{random_scores(rng), random_scores(rng),
                             random_scores(rng)};
  Vector before = score_tree_forward(tree, descriptors, scores);
  tree.final_classifier.bias.value.array() += 11.3;
  Vector after = score_tree_forward(tree, descriptors, scores);
  Index a = 0, b = 0;
  before.maxCoeff(&a);
  after.maxCoeff(&b);
  CHECK(a == b);
  CHECK((before - after).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("score tree: gradients pass grad_check through all stages") {
  Rng rng(59);
  ScoreTreeFusion tree({3, 2, 4}, rng);
  Matrix d0 = random_matrix(2, 3, rng), d1 = random_matrix(2, 2, rng),
         d2 = random_matrix(2, 4, rng);
  Matrix s0(2, kNumClasses), s1(2, kNumClasses), s2(2, kNumClasses);
  for (Index r = 0; r < 2; ++r) {
    s0.row(r) = random_scores(rng).transpose();
    s1.row(r) = random_scores(rng).transpose();
    s2.row(r) = random_scores(rng).transpose();
  }
  std::vector<int> targets{1, 4};
  std::vector<Scalar> w(2, 0.5);
  auto params = tree.params();
  auto report = grad_check_model(
      params,
      [&](Binder& b) {
        Tape& t = b.tape();
        std::vector<Var> descriptors{t.constant(d0), t.constant(d1),
                                     t.constant(d2)};
        std::vector<Var> scores{t.constant(s0), t.constant(s1),
                                t.constant(s2)};
        Var logits = score_tree_logits(b, tree, descriptors, scores);
        return softmax_cross_entropy_rows(logits, targets, w);
      },
      1e-4);
  CHECK_MESSAGE(report.pass, "worst ", report.worst_rel_error, " at ",
                report.worst_entry);
}

TEST_CASE("confusion_dissimilarity: identity, disjointness, hand case") {
  Matrix a = Matrix::Identity(7, 7);
  CHECK(confusion_dissimilarity(a, a) == doctest::Approx(0.0));

  Matrix b = Matrix::Zero(7, 7);
  for (Index r = 0; r < 7; ++r) b(r, (r + 1) % 7) = 1.0;
  CHECK(confusion_dissimilarity(a, b) == doctest::Approx(1.0));

  // Hand-built 2x2 case evaluated at extended precision.
  Matrix p(2, 2), q(2, 2);
  p << 0.8, 0.2, 0.4, 0.6;
  q << 0.5, 0.5, 0.1, 0.9;
  long double dot = 0.8L * 0.5L + 0.2L * 0.5L + 0.4L * 0.1L + 0.6L * 0.9L;
  long double np = sqrtl(0.64L + 0.04L + 0.16L + 0.36L);
  long double nq = sqrtl(0.25L + 0.25L + 0.01L + 0.81L);
  Scalar expect = static_cast<Scalar>(1.0L - dot / (np * nq));
  CHECK(confusion_dissimilarity(p, q) == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(confusion_dissimilarity(Matrix::Zero(7, 7), a),
                  ContractError);
  CHECK_THROWS_AS(confusion_dissimilarity(Matrix::Zero(3, 3), a),
                  DimensionError);
}

TEST_CASE("row_normalize_confusion: rows become per-class recall") {
  Matrix c(2, 2);
  c << 6, 2, 0, 0;
  Matrix n = row_normalize_confusion(c);
  CHECK(n(0, 0) == doctest::Approx(0.75));
  CHECK(n(0, 1) == doctest::Approx(0.25));
  CHECK(n.row(1).isZero());
}

TEST_CASE("train_moddrop: high-gamma phase zeroes cross-modal blocks") {
  Rng rng(61);
  ModalitySet train = separable_set(56, rng);
  Rng model_rng(5);
  ModDropFusion model({5, 4, 6}, 24, model_rng, 0.2);
  FusionTrainConfig config;
  config.epochs = 10;
  config.gamma = {.high = 10.0, .phase_epochs = 10, .decay = 0.5,
                  .low = 1e-4};
  config.sgd = {.learning_rate = 0.1, .momentum = 0.9, .weight_decay = 0.0};
  Rng train_rng(9);
  auto log = train_moddrop(model, train, config, train_rng);
  CHECK(log.rows.size() == 10);
  CHECK(model.offdiagonal_mass() <= 1e-3 * model.diagonal_mass());
}

TEST_CASE("fusion training: both models fit a separable set") {
  Rng rng(67);
  ModalitySet train = separable_set(70, rng);

  Rng m_rng(3);
  ModDropFusion moddrop({5, 4, 6}, 24, m_rng, 0.15);
  FusionTrainConfig md_config;
  md_config.epochs = 30;
  md_config.gamma = {.high = 10.0, .phase_epochs = 5, .decay = 0.5,
                     .low = 1e-4};
  md_config.sgd = {.learning_rate = 0.15, .momentum = 0.9,
                   .weight_decay = 0.0};
  Rng t_rng(7);
  auto md_log = train_moddrop(moddrop, train, md_config, t_rng);
  CHECK(md_log.rows.back()[4] >= 0.95);  // train accuracy column

  Rng s_rng(11);
  ScoreTreeFusion tree({5, 4, 6}, s_rng);
  FusionTrainConfig st_config;
  st_config.epochs = 30;
  st_config.sgd = {.learning_rate = 0.2, .momentum = 0.9,
                   .weight_decay = 0.0};
  Rng t2_rng(13);
  auto st_log = train_score_tree(tree, train, st_config, t2_rng);
  CHECK(st_log.rows.back()[2] >= 0.95);
}

TEST_CASE("train_moddrop: ablated run descends at least as fast") {
  Rng rng(71);
  ModalitySet train = separable_set(42, rng);
  auto run = [&](bool regularized) {
    Rng m_rng(17);
    ModDropFusion model({5, 4, 6}, 24, m_rng, 0.3);
    FusionTrainConfig config;
    config.epochs = 12;
    config.use_penalty = regularized;
    config.use_modality_drop = regularized;
    config.gamma = {.high = 10.0, .phase_epochs = 6, .decay = 0.5,
                    .low = 1e-4};
    config.sgd = {.learning_rate = 0.1, .momentum = 0.9, .weight_decay = 0.0};
    Rng t_rng(19);
    return train_moddrop(model, train, config, t_rng);
  };
  auto with = run(true);
  auto without = run(false);
  for (std::size_t e = 0; e < with.rows.size(); ++e)
    CHECK(without.rows[e][2] <= with.rows[e][2] + 0.02);
}

TEST_CASE("train_moddrop: rejects an empty set") {
  Rng rng(1);
  ModDropFusion model({2, 2}, 4, rng);
  ModalitySet empty;
  empty.modality_names = {"a", "b"};
  empty.descriptor_dims = {2, 2};
  CHECK_THROWS_AS(train_moddrop(model, empty, {}, rng), ContractError);
}
