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

#include <optional>
#include <string>
#include <vector>

#include "tmf/layers.hpp"
#include "tmf/types.hpp"

namespace tmf {

inline constexpr int kNumClasses = 7;

// ---- windowing -------------------------------------------------------------

struct WindowingSpec {
  Index window_length = 16;
  Index stride = 16;  // 16 = no overlap, 8 = half overlap
  bool pad_short = true;
};

// Splits a length-L sequence into windows starting at 0, stride, 2*stride...
// With pad_short, the window count is ceil(L / stride) and indices past L-1
// wrap cyclically (sequences padded by themselves). Without it, only fully
// contained windows are produced.
std::vector<std::vector<Index>> segment_windows(Index length,
                                                const WindowingSpec& spec);

// Mean frame vector per window: [num_windows x dim].
Matrix window_descriptors(const Matrix& sequence, const WindowingSpec& spec);

// ---- score pooling ---------------------------------------------------------

enum class PoolMode { kMaxScore, kMeanScore };

struct PooledPrediction {
  int predicted_class = 0;
  RowVector pooled;  // per-class max, or per-class mean
};

// steps x classes score rows; ties break toward the lowest class index.
PooledPrediction pool_scores(const Matrix& step_scores, PoolMode mode);

// ---- window weighting ------------------------------------------------------

// T(t) = max(initial * decay^t, floor); non-increasing in t.
struct TemperatureSchedule {
  Scalar initial = 1.0;
  Scalar decay = 0.85;
  Scalar floor = 0.05;

  Scalar at(int epoch) const;
  void validate() const;
};

// Softmin weights over one video's per-window losses:
//   w_j = exp(-s_j / T) / sum_k exp(-s_k / T)
// computed via a stable shift by the minimum loss. Weights sum to 1 within
// 1e-9 and are invariant to adding a constant to all losses.
Vector window_weights(const Vector& losses, Scalar temperature);

// ---- modality heads --------------------------------------------------------

struct ModalityOutput {
  Vector descriptor;
  Vector scores;  // kNumClasses entries summing to 1
};

// Two-layer perceptron head for single-vector modalities: the hidden layer
// doubles as the compact descriptor.
struct MlpHead {
  DenseLayer fc1;  // input -> descriptor (linear; relu applied after the
                   // optional batch norm)
  DenseLayer fc2;  // descriptor -> classes
  std::optional<BatchNorm> norm;
  Scalar dropout_keep = 1.0;

  MlpHead() = default;
  MlpHead(Index input, Index descriptor, Rng& rng, bool batchnorm = true,
          Scalar dropout = 1.0, int classes = kNumClasses);

  Index input_size() const { return fc1.in_size(); }
  Index descriptor_size() const { return fc1.out_size(); }
  std::vector<Param*> params();

  // Batch of row vectors -> logits. Train mode uses batch statistics and
  // dropout and therefore needs batch >= 2 when batch norm is enabled.
  Var logits(Binder& b, const Var& x, bool train, Rng* rng = nullptr);
  ModalityOutput infer(const Vector& input);
};

// Recurrent head for descriptor sequences: LSTM, then a fully connected
// descriptor layer, then the class layer.
struct LstmHead {
  Lstm lstm;
  DenseLayer fc;   // lstm output -> descriptor (relu)
  DenseLayer out;  // descriptor -> classes

  LstmHead() = default;
  LstmHead(Index input, Index hidden, Index descriptor, const LstmOptions& o,
           Rng& rng, int classes = kNumClasses);

  Index input_size() const { return lstm.cells.front().input_size(); }
  Index descriptor_size() const { return fc.out_size(); }
  std::vector<Param*> params();

  Var logits(Binder& b, const Var& sequence, bool train, Rng* rng = nullptr);
  ModalityOutput infer(const Matrix& sequence);
};

// Dense classifier over precomputed window descriptors (the trainable
// stand-in for a window-level backbone).
struct WindowHead {
  DenseLayer fc1;  // window descriptor -> hidden (relu)
  DenseLayer fc2;  // hidden -> classes
  Scalar dropout_keep = 1.0;

  WindowHead() = default;
  WindowHead(Index input, Index hidden, Rng& rng, Scalar dropout = 1.0,
             int classes = kNumClasses);

  Index input_size() const { return fc1.in_size(); }
  Index hidden_size() const { return fc1.out_size(); }
  std::vector<Param*> params();

  // Rows of window descriptors -> logits rows.
  Var logits(Binder& b, const Var& windows, bool train, Rng* rng = nullptr);
  // Softmax scores for every window: [num_windows x classes].
  Matrix window_scores(const Matrix& windows);
  // Video-level output: the window with the maximal top score wins; its
  // hidden activations become the descriptor.
  ModalityOutput infer(const Matrix& windows);
};

// Prediction of the window whose top softmax score is maximal; ties break to
// the lowest window index, then the lowest class index.
int evaluate_windowed(WindowHead& head, const Matrix& windows);
int select_top_window(const Matrix& window_scores);

// ---- weighted-window (MIL-style) training ----------------------------------

struct WindowedVideo {
  std::string id;
  int label = 0;
  Matrix windows;  // [num_windows x dim]
};

struct TrainingLog {
  std::vector<std::string> columns;
  std::vector<std::vector<Scalar>> rows;

  void write_csv(const std::string& path) const;
};

struct WeightedWindowConfig {
  TemperatureSchedule schedule;
  int phase1_epochs = 5;   // uniform warm-up until the start of convergence
  int phase2_epochs = 20;  // weighted epochs
  bool weighted = true;    // false trains with uniform weights throughout
  SgdOptions sgd;
  Index batch_videos = 32;
  Scalar dropout_keep = 1.0;
  int workers = 1;
};

// Two-phase training: uniform-weight warm-up, then per-epoch reweighting of
// windows by softmin of their current losses at temperature T(t). Weights
// are recomputed once per epoch from a full forward pass and act as
// gradient constants. The log columns are epoch, temperature, mean weighted
// loss, mean weight entropy, and train accuracy.
TrainingLog train_weighted_windows(WindowHead& head,
                                   const std::vector<WindowedVideo>& videos,
                                   const WeightedWindowConfig& config,
                                   Rng& rng);

// ---- plain head training ---------------------------------------------------

struct HeadTrainConfig {
  int epochs = 30;
  SgdOptions sgd;
  Index batch = 32;
  int workers = 1;
};

// Minibatch cross-entropy training; logs epoch, mean loss, train accuracy.
TrainingLog train_mlp_head(MlpHead& head, const Matrix& inputs,
                           const std::vector<int>& labels,
                           const HeadTrainConfig& config, Rng& rng);
TrainingLog train_lstm_head(LstmHead& head,
                            const std::vector<Matrix>& sequences,
                            const std::vector<int>& labels,
                            const HeadTrainConfig& config, Rng& rng);

}  // namespace tmf
