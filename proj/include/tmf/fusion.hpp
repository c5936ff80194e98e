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

#include <string>
#include <utility>
#include <vector>

#include "tmf/layers.hpp"
#include "tmf/temporal.hpp"
#include "tmf/types.hpp"

namespace tmf {

// Frozen per-modality outputs for a set of videos; the unit every fusion
// method consumes.
struct ModalitySet {
  std::vector<std::string> modality_names;
  std::vector<Index> descriptor_dims;
  std::vector<std::string> video_ids;
  std::vector<int> labels;
  std::vector<std::vector<ModalityOutput>> outputs;  // [video][modality]

  Index num_modalities() const {
    return static_cast<Index>(modality_names.size());
  }
  std::size_t num_videos() const { return outputs.size(); }
  Index total_descriptor_dim() const;
  // Stacked descriptors of one video, modality blocks in declared order.
  RowVector concat_descriptors(std::size_t video) const;
  std::vector<Vector> scores_of(std::size_t video) const;

  // Requires n >= 2 and every video to carry every modality at its
  // declared dimension.
  void validate() const;
};

// ---- baseline score fusion ---------------------------------------------------

enum class BaselineFusion { kMajority, kMean, kMax };

BaselineFusion baseline_fusion_from_string(const std::string& s);

// Majority ties break toward the highest mean score among tied classes, then
// the lowest class index.
int fuse_baseline(const std::vector<Vector>& scores, BaselineFusion mode);

// ---- weighted mean -----------------------------------------------------------

// lambda >= 0, sum lambda = 1 (within 1e-9).
void validate_simplex(const Vector& lambda);

std::pair<Vector, int> fuse_weighted_mean(const std::vector<Vector>& scores,
                                          const Vector& lambda);

// All lambda on the simplex grid with the given step (which must divide 1).
std::vector<Vector> simplex_grid(Index modalities, Scalar step);

// Exhaustive grid search maximizing validation accuracy; ties prefer the
// lambda closest to uniform, then the lexicographically smallest.
Vector search_weighted_mean(const ModalitySet& validation, Scalar grid_step);

// ---- ModDrop fusion ------------------------------------------------------------

// Piecewise gamma: `high` while t < phase_epochs, then high * decay^(t-phase),
// floored at `low`.
struct GammaSchedule {
  Scalar high = 10.0;
  int phase_epochs = 10;
  Scalar decay = 0.5;
  Scalar low = 1e-4;

  Scalar at(int epoch) const;
  void validate() const;
};

// One hidden layer whose weight matrix is partitioned into n^2 blocks
// W1[k,l] (rows split across modalities proportionally to their descriptor
// dims), followed by a dense layer to class scores. Training drops whole
// modalities and decays the off-diagonal (cross-modality) blocks.
struct ModDropFusion {
  std::vector<Index> input_dims;
  std::vector<Index> hidden_split;
  Param w1, b1, w2, b2;
  Scalar drop_probability = 0.2;

  ModDropFusion() = default;
  ModDropFusion(std::vector<Index> dims, Index hidden_total, Rng& rng,
                Scalar drop_prob = 0.2, int classes = kNumClasses);

  Index num_modalities() const {
    return static_cast<Index>(input_dims.size());
  }
  Index input_total() const;
  Index hidden_total() const;
  Index row_offset(Index k) const;
  Index col_offset(Index l) const;
  std::vector<Param*> params() { return {&w1, &b1, &w2, &b2}; }

  // Frobenius norms summed over block groups.
  Scalar offdiagonal_mass() const;
  Scalar diagonal_mass() const;
};

// Splits total hidden units across modalities proportionally to their
// descriptor dims (largest remainder, every modality gets at least one).
std::vector<Index> proportional_split(const std::vector<Index>& dims,
                                      Index total);

// Zeroes each modality block of each row independently with the model's drop
// probability; rows drawing an all-dropped mask are redrawn so at least one
// modality survives.
Matrix apply_modality_drop(const ModDropFusion& model, const Matrix& inputs,
                           Rng& rng);

// relu(W1 m + b1): the block-structured hidden representation.
Var moddrop_hidden(Binder& b, ModDropFusion& model, const Var& inputs);
// relu(W1 m + b1) -> dense -> logits, over rows of already-(un)dropped
// concatenated descriptors.
Var moddrop_logits(Binder& b, ModDropFusion& model, const Var& inputs);

// Fused softmax scores for one video. Train mode applies modality drop.
Vector moddrop_forward(ModDropFusion& model,
                       const std::vector<Vector>& descriptors, bool train,
                       Rng* rng = nullptr);

// gamma * sum_{k != l} ||W1[k,l]||_F, on the tape (gradients reach only the
// off-diagonal blocks).
Var moddrop_penalty(Binder& b, ModDropFusion& model, Scalar gamma);
Scalar moddrop_penalty_value(const ModDropFusion& model, Scalar gamma);

// Proximal shrink of the off-diagonal block norms by `threshold`
// (= learning rate * gamma): blocks at or below the threshold collapse to
// exactly zero. This is how the trainer realizes the penalty.
void moddrop_offdiagonal_prox(ModDropFusion& model, Scalar threshold);

// ---- Score Tree fusion ---------------------------------------------------------

// Per modality: a feature classifier (descriptor -> classes) whose output is
// concatenated with the other modalities' scores and passed through a mixer;
// the mixer outputs feed one final classifier. All stages end in softmax.
struct ScoreTreeFusion {
  std::vector<DenseLayer> feature_classifiers;  // descriptor_k -> classes
  std::vector<DenseLayer> mixers;               // classes * n -> classes
  DenseLayer final_classifier;                  // classes * n -> classes

  ScoreTreeFusion() = default;
  ScoreTreeFusion(const std::vector<Index>& descriptor_dims, Rng& rng,
                  int classes = kNumClasses);

  Index num_modalities() const {
    return static_cast<Index>(feature_classifiers.size());
  }
  // (mixer input size, final input size) — both classes * n.
  std::pair<Index, Index> intermediate_sizes() const;
  std::vector<Param*> params();
};

// Batch path: descriptors[k] is [B x d_k], scores[k] is [B x classes].
Var score_tree_logits(Binder& b, ScoreTreeFusion& model,
                      const std::vector<Var>& descriptors,
                      const std::vector<Var>& scores);

// Fused softmax scores for one video.
Vector score_tree_forward(ScoreTreeFusion& model,
                          const std::vector<Vector>& descriptors,
                          const std::vector<Vector>& scores);

// ---- confusion complementarity ---------------------------------------------------

// Rows of a confusion matrix normalized to per-class recall (rows with no
// support stay zero).
Matrix row_normalize_confusion(const Matrix& confusion);

// 1 - <A, B>_F / (||A||_F ||B||_F) over row-normalized confusions; 0 for
// identical matrices, 1 for disjoint supports. ContractError on a zero
// matrix.
Scalar confusion_dissimilarity(const Matrix& a, const Matrix& b);

// ---- fusion training ----------------------------------------------------------

struct FusionTrainConfig {
  int epochs = 40;
  SgdOptions sgd;
  Index batch = 32;
  GammaSchedule gamma;             // ModDrop only
  bool use_penalty = true;         // ModDrop only
  bool use_modality_drop = true;   // ModDrop only
  int workers = 1;
};

// Cross-entropy training over frozen modality outputs. The ModDrop log has
// columns epoch, gamma, mean_loss, penalty, train_accuracy, offdiag_mass,
// diag_mass; the Score Tree log has epoch, mean_loss, train_accuracy.
TrainingLog train_moddrop(ModDropFusion& model, const ModalitySet& train_set,
                          const FusionTrainConfig& config, Rng& rng);
TrainingLog train_score_tree(ScoreTreeFusion& model,
                             const ModalitySet& train_set,
                             const FusionTrainConfig& config, Rng& rng);

// Inference helpers over a whole set.
std::vector<int> predict_moddrop(ModDropFusion& model, const ModalitySet& set);
std::vector<int> predict_score_tree(ScoreTreeFusion& model,
                                    const ModalitySet& set);

}  // namespace tmf
