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

#include "tmf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tmf/parallel.hpp"

namespace tmf {

Index ModalitySet::total_descriptor_dim() const {
  return std::accumulate(descriptor_dims.begin(), descriptor_dims.end(),
                         Index(0));
}

RowVector ModalitySet::concat_descriptors(std::size_t video) const {
  RowVector row(total_descriptor_dim());
  Index at = 0;
  for (Index m = 0; m < num_modalities(); ++m) {
    row.middleCols(at, descriptor_dims[m]) =
        outputs[video][m].descriptor.transpose();
    at += descriptor_dims[m];
  }
  return row;
}

std::vector<Vector> ModalitySet::scores_of(std::size_t video) const {
  std::vector<Vector> s;
  s.reserve(outputs[video].size());
  for (const ModalityOutput& o : outputs[video]) s.push_back(o.scores);
  return s;
}

void ModalitySet::validate() const {
  if (num_modalities() < 2)
    throw ContractError(str("modality set: fusion needs >= 2 modalities, got ",
                            num_modalities()));
  if (descriptor_dims.size() != modality_names.size())
    throw ContractError("modality set: names/dims size mismatch");
  if (outputs.size() != labels.size() || outputs.size() != video_ids.size())
    throw ContractError("modality set: video bookkeeping sizes disagree");
  for (std::size_t v = 0; v < outputs.size(); ++v) {
    if (static_cast<Index>(outputs[v].size()) != num_modalities())
      throw ContractError(str("modality set: video '", video_ids[v],
                              "' carries ", outputs[v].size(), " of ",
                              num_modalities(), " modalities"));
    for (Index m = 0; m < num_modalities(); ++m) {
      if (outputs[v][m].descriptor.size() != descriptor_dims[m])
        throw DimensionError(str("modality set: video '", video_ids[v],
                                 "' modality '", modality_names[m],
                                 "' descriptor is ",
                                 outputs[v][m].descriptor.size(),
                                 "-d, declared ", descriptor_dims[m]));
      if (outputs[v][m].scores.size() != kNumClasses)
        throw DimensionError(str("modality set: video '", video_ids[v],
                                 "' modality '", modality_names[m],
                                 "' has ", outputs[v][m].scores.size(),
                                 " scores"));
    }
  }
}

// ---- baselines ---------------------------------------------------------------

BaselineFusion baseline_fusion_from_string(const std::string& s) {
  if (s == "majority") return BaselineFusion::kMajority;
  if (s == "mean") return BaselineFusion::kMean;
  if (s == "max") return BaselineFusion::kMax;
  throw ConfigError(str("unknown baseline fusion '", s, "'"));
}

namespace {

void check_score_dims(const std::vector<Vector>& scores) {
  if (scores.size() < 2)
    throw ContractError(str("score fusion needs >= 2 modalities, got ",
                            scores.size()));
  for (const Vector& s : scores)
    if (s.size() != scores.front().size())
      throw DimensionError(str("score fusion: class counts disagree (",
                               scores.front().size(), " vs ", s.size(), ")"));
}

int argmax_lowest(const Vector& v) {
  Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

int fuse_baseline(const std::vector<Vector>& scores, BaselineFusion mode) {
  check_score_dims(scores);
  const Index classes = scores.front().size();
  switch (mode) {
    case BaselineFusion::kMean: {
      Vector mean = Vector::Zero(classes);
      for (const Vector& s : scores) mean += s;
      return argmax_lowest(mean);
    }
    case BaselineFusion::kMax: {
      Vector peak = scores.front();
      for (const Vector& s : scores) peak = peak.cwiseMax(s);
      return argmax_lowest(peak);
    }
    case BaselineFusion::kMajority: {
      std::vector<int> votes(classes, 0);
      Vector mean = Vector::Zero(classes);
      for (const Vector& s : scores) {
        ++votes[argmax_lowest(s)];
        mean += s;
      }
      int top_votes = *std::max_element(votes.begin(), votes.end());
      // Tie among classes: highest mean score wins, then lowest index.
      int best = -1;
      for (Index c = 0; c < classes; ++c) {
        if (votes[c] != top_votes) continue;
        if (best < 0 || mean(c) > mean(best)) best = static_cast<int>(c);
      }
      return best;
    }
  }
  throw ContractError("fuse_baseline: unreachable");
}

// ---- weighted mean -------------------------------------------------------------

void validate_simplex(const Vector& lambda) {
  if ((lambda.array() < 0.0).any())
    throw ConfigError("weighted mean: negative modality weight");
  if (std::abs(lambda.sum() - 1.0) > 1e-9)
    throw ConfigError(str("weighted mean: weights sum to ", lambda.sum(),
                          ", expected 1"));
}

std::pair<Vector, int> fuse_weighted_mean(const std::vector<Vector>& scores,
                                          const Vector& lambda) {
  check_score_dims(scores);
  if (static_cast<Index>(scores.size()) != lambda.size())
    throw DimensionError(str("weighted mean: ", lambda.size(),
                             " weights for ", scores.size(), " modalities"));
  validate_simplex(lambda);
  Vector fused = Vector::Zero(scores.front().size());
  for (std::size_t m = 0; m < scores.size(); ++m)
    fused += lambda(static_cast<Index>(m)) * scores[m];
  return {fused, argmax_lowest(fused)};
}

namespace {

void enumerate_compositions(Index parts, Index total,
                            std::vector<Index>& current,
                            std::vector<std::vector<Index>>& out) {
  if (parts == 1) {
    current.push_back(total);
    out.push_back(current);
    current.pop_back();
    return;
  }
  for (Index take = total; take >= 0; --take) {
    current.push_back(take);
    enumerate_compositions(parts - 1, total - take, current, out);
    current.pop_back();
  }
}

}  // namespace

std::vector<Vector> simplex_grid(Index modalities, Scalar step) {
  if (modalities < 1) throw ConfigError("simplex grid: no modalities");
  if (!(step > 0.0) || step > 1.0)
    throw ConfigError(str("simplex grid: step ", step, " not in (0, 1]"));
  Scalar ticks = 1.0 / step;
  Index m = static_cast<Index>(std::llround(ticks));
  if (std::abs(ticks - Scalar(m)) > 1e-9)
    throw ConfigError(str("simplex grid: step ", step, " does not divide 1"));
  std::vector<std::vector<Index>> compositions;
  std::vector<Index> current;
  enumerate_compositions(modalities, m, current, compositions);
  std::vector<Vector> grid;
  grid.reserve(compositions.size());
  for (const auto& c : compositions) {
    Vector lambda(modalities);
    for (Index k = 0; k < modalities; ++k)
      lambda(k) = Scalar(c[k]) / Scalar(m);
    grid.push_back(std::move(lambda));
  }
  return grid;
}

Vector search_weighted_mean(const ModalitySet& validation, Scalar grid_step) {
  validation.validate();
  if (validation.num_videos() == 0)
    throw ContractError("search_weighted_mean: empty validation set");
  auto grid = simplex_grid(validation.num_modalities(), grid_step);
  const Vector uniform = Vector::Constant(
      validation.num_modalities(), 1.0 / Scalar(validation.num_modalities()));

  Vector best;
  int best_correct = -1;
  Scalar best_dist = 0.0;
  for (const Vector& lambda : grid) {
    int correct = 0;
    for (std::size_t v = 0; v < validation.num_videos(); ++v) {
      auto [fused, cls] = fuse_weighted_mean(validation.scores_of(v), lambda);
      if (cls == validation.labels[v]) ++correct;
    }
    Scalar dist = (lambda - uniform).norm();
    bool take = false;
    if (correct > best_correct) {
      take = true;
    } else if (correct == best_correct) {
      if (dist < best_dist - 1e-12) {
        take = true;
      } else if (std::abs(dist - best_dist) <= 1e-12) {
        // Lexicographically smallest among equally central candidates.
        take = std::lexicographical_compare(
            lambda.data(), lambda.data() + lambda.size(), best.data(),
            best.data() + best.size());
      }
    }
    if (take) {
      best = lambda;
      best_correct = correct;
      best_dist = dist;
    }
  }
  return best;
}

// ---- ModDrop --------------------------------------------------------------------

Scalar GammaSchedule::at(int epoch) const {
  if (epoch < phase_epochs) return high;
  return std::max(high * std::pow(decay, epoch - phase_epochs), low);
}

void GammaSchedule::validate() const {
  if (high < 0.0 || low < 0.0 || low > high)
    throw ConfigError(str("gamma schedule: need 0 <= low <= high, got high=",
                          high, " low=", low));
  if (!(decay > 0.0) || decay > 1.0)
    throw ConfigError(str("gamma schedule: decay ", decay,
                          " must be in (0, 1]"));
  if (phase_epochs < 0)
    throw ConfigError("gamma schedule: negative phase length");
}

std::vector<Index> proportional_split(const std::vector<Index>& dims,
                                      Index total) {
  if (dims.empty()) throw ConfigError("proportional split: no modalities");
  if (total < static_cast<Index>(dims.size()))
    throw ConfigError(str("proportional split: ", total, " units for ",
                          dims.size(), " modalities"));
  Scalar sum = Scalar(std::accumulate(dims.begin(), dims.end(), Index(0)));
  std::vector<Index> split(dims.size());
  std::vector<std::pair<Scalar, std::size_t>> remainders;
  Index assigned = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    Scalar exact = Scalar(total) * Scalar(dims[k]) / sum;
    split[k] = std::max<Index>(1, static_cast<Index>(exact));
    assigned += split[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  // Largest remainders absorb the leftover (or give back the overdraft).
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::size_t at = 0;
  while (assigned < total) {
    ++split[remainders[at % remainders.size()].second];
    ++assigned;
    ++at;
  }
  at = remainders.size();
  while (assigned > total) {
    --at;
    if (at == std::size_t(-1)) at = remainders.size() - 1;
    std::size_t k = remainders[at].second;
    if (split[k] > 1) {
      --split[k];
      --assigned;
    }
  }
  return split;
}

ModDropFusion::ModDropFusion(std::vector<Index> dims, Index hidden_total_units,
                             Rng& rng, Scalar drop_prob, int classes)
    : input_dims(std::move(dims)),
      hidden_split(proportional_split(input_dims, hidden_total_units)),
      drop_probability(drop_prob) {
  if (input_dims.size() < 2)
    throw ConfigError("moddrop: needs at least two modalities");
  if (drop_prob < 0.0 || drop_prob >= 1.0)
    throw ConfigError(str("moddrop: drop probability ", drop_prob,
                          " must be in [0, 1)"));
  Index in = input_total();
  Index hidden = hidden_total();
  w1 = Param("w1", glorot_uniform(hidden, in, rng), /*decay=*/false);
  b1 = Param("b1", Matrix::Zero(1, hidden));
  w2 = Param("w2", glorot_uniform(classes, hidden, rng));
  b2 = Param("b2", Matrix::Zero(1, classes));
}

Index ModDropFusion::input_total() const {
  return std::accumulate(input_dims.begin(), input_dims.end(), Index(0));
}

Index ModDropFusion::hidden_total() const {
  return std::accumulate(hidden_split.begin(), hidden_split.end(), Index(0));
}

Index ModDropFusion::row_offset(Index k) const {
  return std::accumulate(hidden_split.begin(), hidden_split.begin() + k,
                         Index(0));
}

Index ModDropFusion::col_offset(Index l) const {
  return std::accumulate(input_dims.begin(), input_dims.begin() + l,
                         Index(0));
}

Scalar ModDropFusion::offdiagonal_mass() const {
  Scalar mass = 0.0;
  for (Index k = 0; k < num_modalities(); ++k)
    for (Index l = 0; l < num_modalities(); ++l)
      if (k != l)
        mass += w1.value
                    .block(row_offset(k), col_offset(l), hidden_split[k],
                           input_dims[l])
                    .norm();
  return mass;
}

Scalar ModDropFusion::diagonal_mass() const {
  Scalar mass = 0.0;
  for (Index k = 0; k < num_modalities(); ++k)
    mass += w1.value
                .block(row_offset(k), col_offset(k), hidden_split[k],
                       input_dims[k])
                .norm();
  return mass;
}

Matrix apply_modality_drop(const ModDropFusion& model, const Matrix& inputs,
                           Rng& rng) {
  if (inputs.cols() != model.input_total())
    throw DimensionError(str("modality drop: inputs have ", inputs.cols(),
                             " columns, expected ", model.input_total()));
  std::bernoulli_distribution drop(model.drop_probability);
  Matrix out = inputs;
  Index n = model.num_modalities();
  std::vector<bool> dropped(n);
  for (Index r = 0; r < out.rows(); ++r) {
    // Redraw until at least one modality survives.
    bool all;
    do {
      all = true;
      for (Index k = 0; k < n; ++k) {
        dropped[k] = drop(rng);
        all = all && dropped[k];
      }
    } while (all);
    for (Index k = 0; k < n; ++k)
      if (dropped[k])
        out.row(r).middleCols(model.col_offset(k), model.input_dims[k])
            .setZero();
  }
  return out;
}

Var moddrop_hidden(Binder& b, ModDropFusion& model, const Var& inputs) {
  if (inputs.cols() != model.input_total())
    throw DimensionError(str("moddrop: inputs have ", inputs.cols(),
                             " columns, block partition expects ",
                             model.input_total()));
  return relu(add_bias(matmul(inputs, transpose(b(model.w1))), b(model.b1)));
}

Var moddrop_logits(Binder& b, ModDropFusion& model, const Var& inputs) {
  Var h = moddrop_hidden(b, model, inputs);
  return add_bias(matmul(h, transpose(b(model.w2))), b(model.b2));
}

Vector moddrop_forward(ModDropFusion& model,
                       const std::vector<Vector>& descriptors, bool train,
                       Rng* rng) {
  if (static_cast<Index>(descriptors.size()) != model.num_modalities())
    throw DimensionError(str("moddrop: ", descriptors.size(),
                             " descriptors for ", model.num_modalities(),
                             " modalities"));
  Matrix row(1, model.input_total());
  for (Index k = 0; k < model.num_modalities(); ++k) {
    if (descriptors[k].size() != model.input_dims[k])
      throw DimensionError(str("moddrop: modality ", k, " descriptor is ",
                               descriptors[k].size(), "-d, block expects ",
                               model.input_dims[k]));
    row.middleCols(model.col_offset(k), model.input_dims[k]) =
        descriptors[k].transpose();
  }
  if (train) {
    if (!rng) throw ContractError("moddrop: train mode requires an rng");
    row = apply_modality_drop(model, row, *rng);
  }
  Tape t;
  Binder b(t);
  Var scores = softmax_rows(moddrop_logits(b, model, t.constant(row)));
  return scores.value().row(0).transpose();
}

Var moddrop_penalty(Binder& b, ModDropFusion& model, Scalar gamma) {
  if (gamma < 0.0)
    throw ConfigError(str("moddrop penalty: gamma ", gamma, " must be >= 0"));
  Var w = b(model.w1);
  Var total;
  for (Index k = 0; k < model.num_modalities(); ++k) {
    for (Index l = 0; l < model.num_modalities(); ++l) {
      if (k == l) continue;
      Var norm = frobenius_norm(block(w, model.row_offset(k),
                                      model.col_offset(l),
                                      model.hidden_split[k],
                                      model.input_dims[l]));
      total = total.valid() ? add(total, norm) : norm;
    }
  }
  return scale(total, gamma);
}

Scalar moddrop_penalty_value(const ModDropFusion& model, Scalar gamma) {
  return gamma * model.offdiagonal_mass();
}

void moddrop_offdiagonal_prox(ModDropFusion& model, Scalar threshold) {
  if (threshold <= 0.0) return;
  for (Index k = 0; k < model.num_modalities(); ++k) {
    for (Index l = 0; l < model.num_modalities(); ++l) {
      if (k == l) continue;
      auto blk = model.w1.value.block(model.row_offset(k), model.col_offset(l),
                                      model.hidden_split[k],
                                      model.input_dims[l]);
      Scalar norm = blk.norm();
      if (norm <= threshold) {
        blk.setZero();
      } else {
        blk *= (1.0 - threshold / norm);
      }
    }
  }
}

// ---- Score Tree -------------------------------------------------------------------

ScoreTreeFusion::ScoreTreeFusion(const std::vector<Index>& descriptor_dims,
                                 Rng& rng, int classes) {
  if (descriptor_dims.size() < 2)
    throw ConfigError("score tree: needs at least two modalities");
  Index n = static_cast<Index>(descriptor_dims.size());
  for (Index k = 0; k < n; ++k) {
    feature_classifiers.emplace_back(descriptor_dims[k], classes,
                                     Activation::kNone, rng);
    mixers.emplace_back(classes * n, classes, Activation::kNone, rng);
  }
  final_classifier = DenseLayer(classes * n, classes, Activation::kNone, rng);
}

std::pair<Index, Index> ScoreTreeFusion::intermediate_sizes() const {
  return {mixers.front().in_size(), final_classifier.in_size()};
}

std::vector<Param*> ScoreTreeFusion::params() {
  std::vector<Param*> out;
  for (DenseLayer& l : feature_classifiers)
    for (Param* p : l.params()) out.push_back(p);
  for (DenseLayer& l : mixers)
    for (Param* p : l.params()) out.push_back(p);
  for (Param* p : final_classifier.params()) out.push_back(p);
  return out;
}

Var score_tree_logits(Binder& b, ScoreTreeFusion& model,
                      const std::vector<Var>& descriptors,
                      const std::vector<Var>& scores) {
  Index n = model.num_modalities();
  if (static_cast<Index>(descriptors.size()) != n ||
      static_cast<Index>(scores.size()) != n)
    throw DimensionError(str("score tree: got ", descriptors.size(),
                             " descriptor and ", scores.size(),
                             " score inputs for ", n, " modalities"));
  for (Index k = 0; k < n; ++k) {
    if (descriptors[k].cols() != model.feature_classifiers[k].in_size())
      throw DimensionError(str("score tree feature stage, modality ", k,
                               ": descriptor is ", descriptors[k].cols(),
                               "-d, classifier expects ",
                               model.feature_classifiers[k].in_size()));
  }
  std::vector<Var> branch_predictions;
  for (Index k = 0; k < n; ++k) {
    Var f = softmax_rows(
        dense_forward(b, model.feature_classifiers[k], descriptors[k]));
    // Own feature prediction first, then the other modalities' scores in
    // declared order.
    std::vector<Var> parts{f};
    for (Index other = 0; other < n; ++other)
      if (other != k) parts.push_back(scores[other]);
    Var mixed = concat_cols(parts);
    if (mixed.cols() != model.mixers[k].in_size())
      throw DimensionError(str("score tree mixer stage, modality ", k,
                               ": concatenation is ", mixed.cols(),
                               "-d, mixer expects ",
                               model.mixers[k].in_size()));
    branch_predictions.push_back(
        softmax_rows(dense_forward(b, model.mixers[k], mixed)));
  }
  Var final_in = concat_cols(branch_predictions);
  if (final_in.cols() != model.final_classifier.in_size())
    throw DimensionError(str("score tree final stage: concatenation is ",
                             final_in.cols(), "-d, classifier expects ",
                             model.final_classifier.in_size()));
  return dense_forward(b, model.final_classifier, final_in);
}

Vector score_tree_forward(ScoreTreeFusion& model,
                          const std::vector<Vector>& descriptors,
                          const std::vector<Vector>& scores) {
  Tape t;
  Binder b(t);
  std::vector<Var> d, s;
  for (const Vector& v : descriptors) d.push_back(t.constant(v.transpose()));
  for (const Vector& v : scores) s.push_back(t.constant(v.transpose()));
  Var out = softmax_rows(score_tree_logits(b, model, d, s));
  return out.value().row(0).transpose();
}

// ---- confusion dissimilarity ---------------------------------------------------------

Matrix row_normalize_confusion(const Matrix& confusion) {
  Matrix out = confusion;
  for (Index r = 0; r < out.rows(); ++r) {
    Scalar total = out.row(r).sum();
    if (total > 0.0) out.row(r) /= total;
  }
  return out;
}

Scalar confusion_dissimilarity(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(str("confusion dissimilarity: shapes disagree (",
                             a.rows(), "x", a.cols(), " vs ", b.rows(), "x",
                             b.cols(), ")"));
  Scalar na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw ContractError("confusion dissimilarity: zero confusion matrix");
  Scalar cosine = a.cwiseProduct(b).sum() / (na * nb);
  return std::clamp(1.0 - cosine, 0.0, 1.0);
}

// ---- training ------------------------------------------------------------------------

namespace {

Matrix stack_descriptors(const ModalitySet& set) {
  Matrix x(static_cast<Index>(set.num_videos()), set.total_descriptor_dim());
  for (std::size_t v = 0; v < set.num_videos(); ++v)
    x.row(static_cast<Index>(v)) = set.concat_descriptors(v);
  return x;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

Scalar accuracy_of(const std::vector<int>& preds,
                   const std::vector<int>& labels) {
  int correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++correct;
  return preds.empty() ? 0.0 : Scalar(correct) / Scalar(preds.size());
}

}  // namespace

std::vector<int> predict_moddrop(ModDropFusion& model, const ModalitySet& set) {
  std::vector<int> preds(set.num_videos());
  Matrix x = stack_descriptors(set);
  Tape t;
  Binder b(t);
  Var scores = softmax_rows(moddrop_logits(b, model, t.constant(x)));
  for (std::size_t v = 0; v < set.num_videos(); ++v) {
    Index cls = 0;
    scores.value().row(static_cast<Index>(v)).maxCoeff(&cls);
    preds[v] = static_cast<int>(cls);
  }
  return preds;
}

std::vector<int> predict_score_tree(ScoreTreeFusion& model,
                                    const ModalitySet& set) {
  Index n = set.num_modalities();
  Tape t;
  Binder b(t);
  std::vector<Var> descriptors, scores;
  for (Index m = 0; m < n; ++m) {
    Matrix d(static_cast<Index>(set.num_videos()), set.descriptor_dims[m]);
    Matrix s(static_cast<Index>(set.num_videos()), kNumClasses);
    for (std::size_t v = 0; v < set.num_videos(); ++v) {
      d.row(static_cast<Index>(v)) = set.outputs[v][m].descriptor.transpose();
      s.row(static_cast<Index>(v)) = set.outputs[v][m].scores.transpose();
    }
    descriptors.push_back(t.constant(std::move(d)));
    scores.push_back(t.constant(std::move(s)));
  }
  Var out = softmax_rows(score_tree_logits(b, model, descriptors, scores));
  std::vector<int> preds(set.num_videos());
  for (std::size_t v = 0; v < set.num_videos(); ++v) {
    Index cls = 0;
    out.value().row(static_cast<Index>(v)).maxCoeff(&cls);
    preds[v] = static_cast<int>(cls);
  }
  return preds;
}

TrainingLog train_moddrop(ModDropFusion& model, const ModalitySet& train_set,
                          const FusionTrainConfig& config, Rng& rng) {
  train_set.validate();
  if (train_set.num_videos() == 0)
    throw ContractError("train_moddrop: empty training set");
  if (config.use_penalty) config.gamma.validate();
  Sgd optimizer(config.sgd);
  Matrix inputs = stack_descriptors(train_set);

  TrainingLog log;
  log.columns = {"epoch",          "gamma",        "mean_loss",
                 "penalty",        "train_accuracy", "offdiag_mass",
                 "diag_mass"};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Scalar gamma = config.use_penalty ? config.gamma.at(epoch) : 0.0;
    auto order = shuffled_indices(train_set.num_videos(), rng);
    Scalar epoch_loss = 0.0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(config.batch)) {
      std::size_t stop =
          std::min(order.size(), at + static_cast<std::size_t>(config.batch));
      Index rows = static_cast<Index>(stop - at);
      Matrix x(rows, inputs.cols());
      std::vector<int> targets(rows);
      std::vector<Scalar> w(rows, 1.0 / Scalar(rows));
      for (Index r = 0; r < rows; ++r) {
        x.row(r) = inputs.row(order[at + r]);
        targets[r] = train_set.labels[order[at + r]];
      }
      if (config.use_modality_drop) x = apply_modality_drop(model, x, rng);
      Tape t;
      Binder b(t);
      Var logits = moddrop_logits(b, model, t.constant(std::move(x)));
      Var loss = softmax_cross_entropy_rows(logits, targets, w);
      t.backward(loss);
      optimizer.step(b);
      // The group-norm penalty acts through its proximal operator, which
      // zeroes blocks outright once gamma dominates their gradient signal.
      if (config.use_penalty)
        moddrop_offdiagonal_prox(model,
                                 config.sgd.learning_rate * gamma);
      epoch_loss += loss.value()(0, 0) * Scalar(rows);
    }
    auto preds = predict_moddrop(model, train_set);
    log.rows.push_back({Scalar(epoch), gamma,
                        epoch_loss / Scalar(train_set.num_videos()),
                        moddrop_penalty_value(model, gamma),
                        accuracy_of(preds, train_set.labels),
                        model.offdiagonal_mass(), model.diagonal_mass()});
  }
  return log;
}

TrainingLog train_score_tree(ScoreTreeFusion& model,
                             const ModalitySet& train_set,
                             const FusionTrainConfig& config, Rng& rng) {
  train_set.validate();
  if (train_set.num_videos() == 0)
    throw ContractError("train_score_tree: empty training set");
  Sgd optimizer(config.sgd);
  Index n = train_set.num_modalities();

  TrainingLog log;
  log.columns = {"epoch", "mean_loss", "train_accuracy"};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = shuffled_indices(train_set.num_videos(), rng);
    Scalar epoch_loss = 0.0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(config.batch)) {
      std::size_t stop =
          std::min(order.size(), at + static_cast<std::size_t>(config.batch));
      Index rows = static_cast<Index>(stop - at);
      Tape t;
      Binder b(t);
      std::vector<Var> descriptors, scores;
      for (Index m = 0; m < n; ++m) {
        Matrix d(rows, train_set.descriptor_dims[m]);
        Matrix s(rows, kNumClasses);
        for (Index r = 0; r < rows; ++r) {
          const ModalityOutput& out = train_set.outputs[order[at + r]][m];
          d.row(r) = out.descriptor.transpose();
          s.row(r) = out.scores.transpose();
        }
        descriptors.push_back(t.constant(std::move(d)));
        scores.push_back(t.constant(std::move(s)));
      }
      std::vector<int> targets(rows);
      std::vector<Scalar> w(rows, 1.0 / Scalar(rows));
      for (Index r = 0; r < rows; ++r)
        targets[r] = train_set.labels[order[at + r]];
      Var logits = score_tree_logits(b, model, descriptors, scores);
      Var loss = softmax_cross_entropy_rows(logits, targets, w);
      t.backward(loss);
      optimizer.step(b);
      epoch_loss += loss.value()(0, 0) * Scalar(rows);
    }
    auto preds = predict_score_tree(model, train_set);
    log.rows.push_back({Scalar(epoch),
                        epoch_loss / Scalar(train_set.num_videos()),
                        accuracy_of(preds, train_set.labels)});
  }
  return log;
}

}  // namespace tmf
