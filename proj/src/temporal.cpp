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

#include "tmf/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "tmf/parallel.hpp"

namespace tmf {

std::vector<std::vector<Index>> segment_windows(Index length,
                                                const WindowingSpec& spec) {
  if (length < 1)
    throw ContractError(str("segment_windows: sequence length ", length));
  if (spec.stride < 1 || spec.stride > spec.window_length)
    throw ConfigError(str("segment_windows: stride ", spec.stride,
                          " must be in [1, window_length=", spec.window_length,
                          "]"));
  std::vector<std::vector<Index>> windows;
  if (spec.pad_short) {
    Index count = (length + spec.stride - 1) / spec.stride;
    windows.reserve(count);
    for (Index w = 0; w < count; ++w) {
      std::vector<Index> idx(spec.window_length);
      for (Index k = 0; k < spec.window_length; ++k)
        idx[k] = (w * spec.stride + k) % length;
      windows.push_back(std::move(idx));
    }
  } else {
    if (length < spec.window_length)
      throw ContractError(str("segment_windows: sequence of ", length,
                              " frames is shorter than an unpadded window of ",
                              spec.window_length));
    for (Index start = 0; start + spec.window_length <= length;
         start += spec.stride) {
      std::vector<Index> idx(spec.window_length);
      std::iota(idx.begin(), idx.end(), start);
      windows.push_back(std::move(idx));
    }
  }
  return windows;
}

Matrix window_descriptors(const Matrix& sequence, const WindowingSpec& spec) {
  auto windows = segment_windows(sequence.rows(), spec);
  Matrix out(static_cast<Index>(windows.size()), sequence.cols());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    RowVector acc = RowVector::Zero(sequence.cols());
    for (Index frame : windows[w]) acc += sequence.row(frame);
    out.row(static_cast<Index>(w)) = acc / Scalar(windows[w].size());
  }
  return out;
}

PooledPrediction pool_scores(const Matrix& step_scores, PoolMode mode) {
  if (step_scores.rows() < 1 || step_scores.cols() < 1)
    throw ContractError("pool_scores: no steps");
  PooledPrediction out;
  if (mode == PoolMode::kMaxScore) {
    out.pooled = step_scores.colwise().maxCoeff();
  } else {
    out.pooled = step_scores.colwise().mean();
  }
  Index best = 0;
  out.pooled.maxCoeff(&best);  // first maximum: lowest class index
  out.predicted_class = static_cast<int>(best);
  return out;
}

Scalar TemperatureSchedule::at(int epoch) const {
  return std::max(initial * std::pow(decay, epoch), floor);
}

void TemperatureSchedule::validate() const {
  if (!(initial > 0.0))
    throw ConfigError(str("temperature schedule: initial ", initial,
                          " must be > 0"));
  if (!(decay > 0.0) || decay > 1.0)
    throw ConfigError(str("temperature schedule: decay ", decay,
                          " must be in (0, 1]"));
  if (!(floor > 0.0))
    throw ConfigError(str("temperature schedule: floor ", floor,
                          " must be > 0"));
}

Vector window_weights(const Vector& losses, Scalar temperature) {
  if (losses.size() < 1) throw ContractError("window_weights: no windows");
  if (!(temperature > 0.0))
    throw ConfigError(str("window_weights: temperature ", temperature,
                          " must be > 0"));
  if (!losses.allFinite())
    throw ContractError("window_weights: non-finite loss");
  // Shift by the minimum: exp((min - s) / T) has its largest term at 1,
  // which keeps the normalization stable even for tiny temperatures.
  Scalar lo = losses.minCoeff();
  Vector w = ((lo - losses.array()) / temperature).exp();
  return w / w.sum();
}

// ---- heads ------------------------------------------------------------------

MlpHead::MlpHead(Index input, Index descriptor, Rng& rng, bool batchnorm,
                 Scalar dropout, int classes)
    : fc1(input, descriptor, Activation::kNone, rng),
      fc2(descriptor, classes, Activation::kNone, rng),
      dropout_keep(dropout) {
  if (batchnorm) norm.emplace(descriptor);
}

std::vector<Param*> MlpHead::params() {
  std::vector<Param*> out = fc1.params();
  for (Param* p : fc2.params()) out.push_back(p);
  if (norm)
    for (Param* p : norm->params()) out.push_back(p);
  return out;
}

namespace {

Var mlp_hidden(Binder& b, MlpHead& head, const Var& x, bool train, Rng* rng) {
  Var z = dense_forward(b, head.fc1, x);
  if (head.norm) z = batchnorm_forward(b, *head.norm, z, train);
  Var a = relu(z);
  if (train && head.dropout_keep < 1.0) {
    if (!rng) throw ContractError("mlp head: dropout requires an rng");
    a = dropout_apply({head.dropout_keep, true}, a, *rng);
  }
  return a;
}

Vector softmax_vector(const RowVector& logits) {
  Scalar m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().transpose();
  return e / e.sum();
}

}  // namespace

Var MlpHead::logits(Binder& b, const Var& x, bool train, Rng* rng) {
  if (x.cols() != input_size())
    throw DimensionError(str("mlp head: input has ", x.cols(),
                             " features, expected ", input_size()));
  return dense_forward(b, fc2, mlp_hidden(b, *this, x, train, rng));
}

ModalityOutput MlpHead::infer(const Vector& input) {
  if (input.size() != input_size())
    throw DimensionError(str("mlp head: input has ", input.size(),
                             " features, expected ", input_size()));
  Tape t;
  Binder b(t);
  Var x = t.constant(input.transpose());
  Var hidden = mlp_hidden(b, *this, x, /*train=*/false, nullptr);
  Var logit = dense_forward(b, fc2, hidden);
  ModalityOutput out;
  out.descriptor = hidden.value().row(0).transpose();
  out.scores = softmax_vector(logit.value().row(0));
  return out;
}

LstmHead::LstmHead(Index input, Index hidden, Index descriptor,
                   const LstmOptions& o, Rng& rng, int classes)
    : lstm(input, hidden, o, rng),
      fc(lstm.output_size(), descriptor, Activation::kRelu, rng),
      out(descriptor, classes, Activation::kNone, rng) {}

std::vector<Param*> LstmHead::params() {
  std::vector<Param*> all = lstm.params();
  for (Param* p : fc.params()) all.push_back(p);
  for (Param* p : out.params()) all.push_back(p);
  return all;
}

Var LstmHead::logits(Binder& b, const Var& sequence, bool train, Rng* rng) {
  Var h = lstm_sequence_forward(b, lstm, sequence, train, rng);
  return dense_forward(b, out, dense_forward(b, fc, h));
}

ModalityOutput LstmHead::infer(const Matrix& sequence) {
  Tape t;
  Binder b(t);
  Var h = lstm_sequence_forward(b, lstm, t.constant(sequence));
  Var descriptor = dense_forward(b, fc, h);
  Var logit = dense_forward(b, out, descriptor);
  ModalityOutput result;
  result.descriptor = descriptor.value().row(0).transpose();
  result.scores = softmax_vector(logit.value().row(0));
  return result;
}

WindowHead::WindowHead(Index input, Index hidden, Rng& rng, Scalar dropout,
                       int classes)
    : fc1(input, hidden, Activation::kRelu, rng),
      fc2(hidden, classes, Activation::kNone, rng),
      dropout_keep(dropout) {}

std::vector<Param*> WindowHead::params() {
  std::vector<Param*> all = fc1.params();
  for (Param* p : fc2.params()) all.push_back(p);
  return all;
}

Var WindowHead::logits(Binder& b, const Var& windows, bool train, Rng* rng) {
  Var h = dense_forward(b, fc1, windows);
  if (train && dropout_keep < 1.0) {
    if (!rng) throw ContractError("window head: dropout requires an rng");
    h = dropout_apply({dropout_keep, true}, h, *rng);
  }
  return dense_forward(b, fc2, h);
}

Matrix WindowHead::window_scores(const Matrix& windows) {
  Tape t;
  Binder b(t);
  Var s = softmax_rows(logits(b, t.constant(windows), /*train=*/false));
  return s.value();
}

int select_top_window(const Matrix& window_scores) {
  if (window_scores.rows() < 1)
    throw ContractError("select_top_window: no windows");
  Index best = 0;
  Scalar best_score = -std::numeric_limits<Scalar>::infinity();
  for (Index w = 0; w < window_scores.rows(); ++w) {
    Scalar top = window_scores.row(w).maxCoeff();
    if (top > best_score) {  // strict: earlier windows win ties
      best_score = top;
      best = w;
    }
  }
  return static_cast<int>(best);
}

ModalityOutput WindowHead::infer(const Matrix& windows) {
  if (windows.rows() < 1)
    throw ContractError("window head: video has no windows");
  Tape t;
  Binder b(t);
  Var x = t.constant(windows);
  Var hidden = dense_forward(b, fc1, x);
  Var scores = softmax_rows(dense_forward(b, fc2, hidden));
  int w = select_top_window(scores.value());
  ModalityOutput out;
  out.descriptor = hidden.value().row(w).transpose();
  out.scores = scores.value().row(w).transpose();
  return out;
}

int evaluate_windowed(WindowHead& head, const Matrix& windows) {
  if (windows.rows() < 1)
    throw ContractError("evaluate_windowed: video has no windows");
  Matrix scores = head.window_scores(windows);
  Index cls = 0;
  scores.row(select_top_window(scores)).maxCoeff(&cls);
  return static_cast<int>(cls);
}

// ---- training ----------------------------------------------------------------

void TrainingLog::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  for (std::size_t c = 0; c < columns.size(); ++c)
    os << (c ? "," : "") << columns[c];
  os << "\n";
  os.precision(10);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c)
      os << (c ? "," : "") << row[c];
    os << "\n";
  }
  if (!os) throw IoError(str("write to '", path, "' failed"));
}

namespace {

struct WindowEval {
  Vector losses;   // per-window cross entropy of the true class
  Matrix scores;   // per-window softmax rows
};

WindowEval eval_video_windows(WindowHead& head, const WindowedVideo& video) {
  WindowEval ev;
  ev.scores = head.window_scores(video.windows);
  ev.losses.resize(ev.scores.rows());
  for (Index w = 0; w < ev.scores.rows(); ++w)
    ev.losses(w) = -std::log(std::max(ev.scores(w, video.label),
                                      std::numeric_limits<Scalar>::min()));
  return ev;
}

Scalar entropy_of(const Vector& w) {
  Scalar h = 0.0;
  for (Index j = 0; j < w.size(); ++j)
    if (w(j) > 0.0) h -= w(j) * std::log(w(j));
  return h;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

TrainingLog train_weighted_windows(WindowHead& head,
                                   const std::vector<WindowedVideo>& videos,
                                   const WeightedWindowConfig& config,
                                   Rng& rng) {
  if (videos.empty())
    throw ContractError("train_weighted_windows: empty dataset");
  for (const WindowedVideo& v : videos)
    if (v.windows.rows() < 1)
      throw ContractError(str("train_weighted_windows: video '", v.id,
                              "' has no windows"));
  if (config.weighted) config.schedule.validate();

  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  Sgd optimizer(config.sgd);
  TrainingLog log;
  log.columns = {"epoch", "temperature", "mean_weighted_loss",
                 "mean_weight_entropy", "train_accuracy"};

  int total_epochs = config.phase1_epochs + config.phase2_epochs;
  std::vector<Vector> weights(videos.size());
  std::vector<WindowEval> evals(videos.size());

  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    bool phase2 = config.weighted && epoch >= config.phase1_epochs;
    Scalar temperature =
        phase2 ? config.schedule.at(epoch - config.phase1_epochs) : inf;

    // Weight-computation pass over the whole set with the current model.
    parallel_for(static_cast<Index>(videos.size()), config.workers,
                 [&](Index i) { evals[i] = eval_video_windows(head, videos[i]); });
    Scalar weighted_loss = 0.0;
    Scalar entropy = 0.0;
    for (std::size_t i = 0; i < videos.size(); ++i) {
      weights[i] = phase2 ? window_weights(evals[i].losses, temperature)
                          : Vector::Constant(evals[i].losses.size(),
                                             1.0 / evals[i].losses.size());
      weighted_loss += weights[i].dot(evals[i].losses);
      entropy += entropy_of(weights[i]);
    }
    weighted_loss /= Scalar(videos.size());
    entropy /= Scalar(videos.size());

    // Minimize sum_i sum_j w_ij loss_ij, weights held constant.
    auto order = shuffled_indices(videos.size(), rng);
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(config.batch_videos)) {
      std::size_t stop = std::min(order.size(),
                                  at + static_cast<std::size_t>(config.batch_videos));
      Index total_windows = 0;
      for (std::size_t k = at; k < stop; ++k)
        total_windows += videos[order[k]].windows.rows();
      Matrix x(total_windows, head.input_size());
      std::vector<int> targets(total_windows);
      std::vector<Scalar> w(total_windows);
      Index row = 0;
      Scalar batch_norm = Scalar(stop - at);
      for (std::size_t k = at; k < stop; ++k) {
        const WindowedVideo& v = videos[order[k]];
        for (Index j = 0; j < v.windows.rows(); ++j, ++row) {
          x.row(row) = v.windows.row(j);
          targets[row] = v.label;
          w[row] = weights[order[k]](j) / batch_norm;
        }
      }
      Tape t;
      Binder b(t);
      Var logits = head.logits(b, t.constant(std::move(x)), /*train=*/true,
                               &rng);
      Var loss = softmax_cross_entropy_rows(logits, targets, w);
      t.backward(loss);
      optimizer.step(b);
    }

    // Post-update accuracy, so the last row reflects the final model.
    int correct = 0;
    std::vector<int> preds(videos.size());
    parallel_for(static_cast<Index>(videos.size()), config.workers,
                 [&](Index i) {
                   preds[i] = evaluate_windowed(head, videos[i].windows);
                 });
    for (std::size_t i = 0; i < videos.size(); ++i)
      if (preds[i] == videos[i].label) ++correct;

    log.rows.push_back({Scalar(epoch), temperature, weighted_loss, entropy,
                        Scalar(correct) / Scalar(videos.size())});
  }
  return log;
}

TrainingLog train_mlp_head(MlpHead& head, const Matrix& inputs,
                           const std::vector<int>& labels,
                           const HeadTrainConfig& config, Rng& rng) {
  if (inputs.rows() == 0) throw ContractError("train_mlp_head: empty dataset");
  if (inputs.rows() != static_cast<Index>(labels.size()))
    throw DimensionError(str("train_mlp_head: ", inputs.rows(),
                             " inputs vs ", labels.size(), " labels"));
  Sgd optimizer(config.sgd);
  TrainingLog log;
  log.columns = {"epoch", "mean_loss", "train_accuracy"};
  const Index n = inputs.rows();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = shuffled_indices(labels.size(), rng);
    Scalar epoch_loss = 0.0;
    std::size_t at = 0;
    while (at < order.size()) {
      std::size_t stop =
          std::min(order.size(), at + static_cast<std::size_t>(config.batch));
      // Batch norm needs at least two rows; fold a trailing singleton into
      // the previous batch by extending this one.
      if (head.norm && order.size() - stop == 1) stop = order.size();
      Index rows = static_cast<Index>(stop - at);
      Matrix x(rows, inputs.cols());
      std::vector<int> targets(rows);
      std::vector<Scalar> w(rows, 1.0 / Scalar(rows));
      for (Index r = 0; r < rows; ++r) {
        x.row(r) = inputs.row(order[at + r]);
        targets[r] = labels[order[at + r]];
      }
      Tape t;
      Binder b(t);
      Var logits = head.logits(b, t.constant(std::move(x)), true, &rng);
      Var loss = softmax_cross_entropy_rows(logits, targets, w);
      t.backward(loss);
      optimizer.step(b);
      epoch_loss += loss.value()(0, 0) * Scalar(rows);
      at = stop;
    }

    int correct = 0;
    std::vector<int> preds(n);
    parallel_for(n, config.workers, [&](Index i) {
      ModalityOutput out = head.infer(inputs.row(i).transpose());
      Index cls = 0;
      out.scores.maxCoeff(&cls);
      preds[i] = static_cast<int>(cls);
    });
    for (Index i = 0; i < n; ++i)
      if (preds[i] == labels[i]) ++correct;
    log.rows.push_back({Scalar(epoch), epoch_loss / Scalar(n),
                        Scalar(correct) / Scalar(n)});
  }
  return log;
}

TrainingLog train_lstm_head(LstmHead& head,
                            const std::vector<Matrix>& sequences,
                            const std::vector<int>& labels,
                            const HeadTrainConfig& config, Rng& rng) {
  if (sequences.empty()) throw ContractError("train_lstm_head: empty dataset");
  if (sequences.size() != labels.size())
    throw DimensionError(str("train_lstm_head: ", sequences.size(),
                             " sequences vs ", labels.size(), " labels"));
  Sgd optimizer(config.sgd);
  TrainingLog log;
  log.columns = {"epoch", "mean_loss", "train_accuracy"};

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = shuffled_indices(sequences.size(), rng);
    Scalar epoch_loss = 0.0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(config.batch)) {
      std::size_t stop =
          std::min(order.size(), at + static_cast<std::size_t>(config.batch));
      Scalar inv = 1.0 / Scalar(stop - at);
      Tape t;
      Binder b(t);
      Var total;
      for (std::size_t k = at; k < stop; ++k) {
        const Matrix& seq = sequences[order[k]];
        Var logits = head.logits(b, t.constant(seq), true, &rng);
        std::vector<int> target{labels[order[k]]};
        std::vector<Scalar> w{inv};
        Var loss = softmax_cross_entropy_rows(logits, target, w);
        total = total.valid() ? add(total, loss) : loss;
      }
      t.backward(total);
      optimizer.step(b);
      epoch_loss += total.value()(0, 0) * Scalar(stop - at);
    }

    int correct = 0;
    std::vector<int> preds(sequences.size());
    parallel_for(static_cast<Index>(sequences.size()), config.workers,
                 [&](Index i) {
                   ModalityOutput out = head.infer(sequences[i]);
                   Index cls = 0;
                   out.scores.maxCoeff(&cls);
                   preds[i] = static_cast<int>(cls);
                 });
    for (std::size_t i = 0; i < sequences.size(); ++i)
      if (preds[i] == labels[i]) ++correct;
    log.rows.push_back({Scalar(epoch), epoch_loss / Scalar(sequences.size()),
                        Scalar(correct) / Scalar(sequences.size())});
  }
  return log;
}

}  // namespace tmf
