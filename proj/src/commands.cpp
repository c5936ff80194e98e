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

#include "tmf/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tmf/parallel.hpp"

namespace tmf {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- configuration --------------------------------------------------------------

namespace {

struct HeadConfig {
  std::string modality;
  std::string kind;  // mlp | lstm | window
  HeadInput input = HeadInput::kVector;
  Index descriptor_size = 0;  // 0 = kind default
  Index hidden_size = 0;      // lstm only; required there
  bool batchnorm = true;      // mlp only
  Scalar dropout_keep = 1.0;
  bool bidirectional = false;  // lstm
  int layers = 1;              // lstm
  Index max_length = 272;      // lstm
  WindowingSpec windowing;     // windows input
  int epochs = 30;
  Scalar learning_rate = 0.05;
  Scalar momentum = 0.9;
  Scalar weight_decay = 0.0;
  Index batch = 32;
  // weighted-window training (window heads)
  bool mil = false;
  int phase1_epochs = 5;
  TemperatureSchedule temperature;
};

struct FusionConfig {
  std::string method = "none";
  Index hidden_total = 256;
  Scalar drop_probability = 0.2;
  GammaSchedule gamma;
  bool use_penalty = true;
  bool use_modality_drop = true;
  int epochs = 40;
  Scalar learning_rate = 0.05;
  Scalar momentum = 0.9;
  Index batch = 32;
  Scalar grid_step = 0.05;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int workers = 1;
  std::string train_manifest;
  std::string val_manifest;  // optional
  std::vector<HeadConfig> heads;
  FusionConfig fusion;
};

const std::vector<std::string> kFusionMethods = {
    "none", "majority", "mean", "max", "weighted-mean", "moddrop",
    "score-tree"};

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(str("config field '", key, "': ", e.what()));
  }
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute() || base_dir.empty()) return path;
  return (fs::path(base_dir) / p).string();
}

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(str("config: ", e.what()));
  }
  if (get_or<int>(j, "version", 0) != 1)
    throw ConfigError("config: missing or unsupported version (expected 1)");
  ExperimentConfig config;
  config.seed = get_or<std::uint64_t>(j, "seed", 1);
  config.workers = get_or<int>(j, "workers", 1);
  if (!j.contains("manifests") || !j.at("manifests").contains("train"))
    throw ConfigError("config: manifests.train is required");
  config.train_manifest =
      resolve(base_dir, j.at("manifests").at("train").get<std::string>());
  if (j.at("manifests").contains("val"))
    config.val_manifest =
        resolve(base_dir, j.at("manifests").at("val").get<std::string>());

  if (!j.contains("heads") || !j.at("heads").is_array() ||
      j.at("heads").empty())
    throw ConfigError("config: at least one head is required");
  for (const json& jh : j.at("heads")) {
    HeadConfig h;
    h.modality = get_or<std::string>(jh, "modality", "");
    h.kind = get_or<std::string>(jh, "kind", "");
    if (h.modality.empty() || h.kind.empty())
      throw ConfigError("config: every head needs 'modality' and 'kind'");
    if (h.kind != "mlp" && h.kind != "lstm" && h.kind != "window")
      throw ConfigError(str("config: head '", h.modality, "': unknown kind '",
                            h.kind, "'"));
    std::string default_input = h.kind == "mlp"      ? "vector"
                                : h.kind == "lstm"   ? "frames"
                                                     : "windows";
    h.input = head_input_from_string(
        get_or<std::string>(jh, "input", default_input));
    if (h.kind == "mlp" && h.input != HeadInput::kVector &&
        h.input != HeadInput::kMean)
      throw ConfigError(str("config: head '", h.modality,
                            "': mlp heads take 'vector' or 'mean' input"));
    if (h.kind == "lstm" && h.input != HeadInput::kFrames &&
        h.input != HeadInput::kWindows)
      throw ConfigError(str("config: head '", h.modality,
                            "': lstm heads take 'frames' or 'windows' input"));
    if (h.kind == "window" && h.input != HeadInput::kWindows)
      throw ConfigError(str("config: head '", h.modality,
                            "': window heads take 'windows' input"));
    Index default_desc = h.kind == "mlp" ? 279 : h.kind == "lstm" ? 297 : 304;
    h.descriptor_size = get_or<Index>(jh, "descriptor_size", default_desc);
    h.hidden_size = get_or<Index>(jh, "hidden_size", 0);
    if (h.kind == "lstm" && h.hidden_size < 1)
      throw ConfigError(str("config: head '", h.modality,
                            "': lstm heads need hidden_size"));
    h.batchnorm = get_or<bool>(jh, "batchnorm", true);
    h.dropout_keep = get_or<Scalar>(jh, "dropout_keep", 1.0);
    h.bidirectional = get_or<bool>(jh, "bidirectional", false);
    h.layers = get_or<int>(jh, "layers", 1);
    h.max_length = get_or<Index>(jh, "max_length", 272);
    h.windowing.window_length = get_or<Index>(jh, "window_length", 16);
    h.windowing.stride = get_or<Index>(jh, "stride", 16);
    h.epochs = get_or<int>(jh, "epochs", 30);
    h.learning_rate = get_or<Scalar>(jh, "learning_rate", 0.05);
    h.momentum = get_or<Scalar>(jh, "momentum", 0.9);
    h.weight_decay = get_or<Scalar>(jh, "weight_decay", 0.0);
    h.batch = get_or<Index>(jh, "batch", 32);
    if (jh.contains("mil")) {
      const json& jm = jh.at("mil");
      h.mil = get_or<bool>(jm, "enabled", true);
      h.phase1_epochs = get_or<int>(jm, "phase1_epochs", 5);
      if (jm.contains("temperature")) {
        const json& jt = jm.at("temperature");
        h.temperature.initial = get_or<Scalar>(jt, "initial", 1.0);
        h.temperature.decay = get_or<Scalar>(jt, "decay", 0.85);
        h.temperature.floor = get_or<Scalar>(jt, "floor", 0.05);
      }
      if (h.mil && h.kind != "window")
        throw ConfigError(str("config: head '", h.modality,
                              "': weighted-window training applies to ",
                              "window heads only"));
    }
    config.heads.push_back(std::move(h));
  }
  for (std::size_t a = 0; a < config.heads.size(); ++a)
    for (std::size_t b = a + 1; b < config.heads.size(); ++b)
      if (config.heads[a].modality == config.heads[b].modality)
        throw ConfigError(str("config: duplicate head for modality '",
                              config.heads[a].modality, "'"));

  if (j.contains("fusion")) {
    const json& jf = j.at("fusion");
    FusionConfig& f = config.fusion;
    f.method = get_or<std::string>(jf, "method", "none");
    if (std::find(kFusionMethods.begin(), kFusionMethods.end(), f.method) ==
        kFusionMethods.end())
      throw ConfigError(str("config: unknown fusion method '", f.method, "'"));
    f.hidden_total = get_or<Index>(jf, "hidden_total", 256);
    f.drop_probability = get_or<Scalar>(jf, "drop_probability", 0.2);
    if (jf.contains("gamma")) {
      const json& jg = jf.at("gamma");
      f.gamma.high = get_or<Scalar>(jg, "high", 10.0);
      f.gamma.phase_epochs = get_or<int>(jg, "phase_epochs", 10);
      f.gamma.decay = get_or<Scalar>(jg, "decay", 0.5);
      f.gamma.low = get_or<Scalar>(jg, "low", 1e-4);
    }
    f.use_penalty = get_or<bool>(jf, "use_penalty", true);
    f.use_modality_drop = get_or<bool>(jf, "use_modality_drop", true);
    f.epochs = get_or<int>(jf, "epochs", 40);
    f.learning_rate = get_or<Scalar>(jf, "learning_rate", 0.05);
    f.momentum = get_or<Scalar>(jf, "momentum", 0.9);
    f.batch = get_or<Index>(jf, "batch", 32);
    f.grid_step = get_or<Scalar>(jf, "grid_step", 0.05);
    if (f.method != "none" && f.method != "weighted-mean" &&
        config.heads.size() < 2 && f.method != "moddrop" &&
        f.method != "score-tree") {
      // baselines still need two modalities; checked again at runtime
    }
  }
  return config;
}

}  // namespace

// ---- data plumbing ------------------------------------------------------------------

std::vector<int> LoadedSplit::labels() const {
  std::vector<int> out;
  out.reserve(manifest.entries.size());
  for (const ManifestEntry& e : manifest.entries) out.push_back(e.label);
  return out;
}

LoadedSplit load_split(const std::string& manifest_path) {
  LoadedSplit split;
  split.manifest = load_manifest(manifest_path);
  split.features.resize(split.manifest.entries.size());
  for (std::size_t e = 0; e < split.manifest.entries.size(); ++e) {
    for (Index m = 0; m < static_cast<Index>(split.manifest.modality_names.size());
         ++m) {
      DescriptorSequence seq =
          read_feature_file(split.manifest.feature_path(e, m));
      if (seq.values.cols() != split.manifest.modality_dims[m])
        throw FormatError(str("'", split.manifest.feature_path(e, m),
                              "': feature dim ", seq.values.cols(),
                              " disagrees with manifest dim ",
                              split.manifest.modality_dims[m],
                              " for modality '",
                              split.manifest.modality_names[m], "'"));
      split.features[e].push_back(std::move(seq));
    }
  }
  return split;
}

ModalitySet compute_modality_outputs(std::vector<TrainedHead>& heads,
                                     const LoadedSplit& split, int workers) {
  ModalitySet set;
  for (TrainedHead& h : heads) {
    set.modality_names.push_back(h.modality);
    set.descriptor_dims.push_back(h.descriptor_size());
  }
  set.outputs.resize(split.manifest.entries.size());
  for (std::size_t e = 0; e < split.manifest.entries.size(); ++e) {
    set.video_ids.push_back(split.manifest.entries[e].video_id);
    set.labels.push_back(split.manifest.entries[e].label);
  }
  std::vector<Index> modality_of(heads.size());
  for (std::size_t h = 0; h < heads.size(); ++h)
    modality_of[h] = split.manifest.modality_index(heads[h].modality);
  parallel_for(
      static_cast<Index>(split.manifest.entries.size()), workers,
      [&](Index e) {
        std::vector<ModalityOutput> outs;
        for (std::size_t h = 0; h < heads.size(); ++h)
          outs.push_back(heads[h].infer(split.features[e][modality_of[h]]));
        set.outputs[e] = std::move(outs);
      });
  return set;
}

// ---- head training --------------------------------------------------------------------

namespace {

TrainedHead train_head(const HeadConfig& config, const LoadedSplit& train,
                       int workers, std::uint64_t seed, TrainingLog& log) {
  Index modality = train.manifest.modality_index(config.modality);
  Index dim = train.manifest.modality_dims[modality];
  Rng rng(seed);

  TrainedHead head;
  head.modality = config.modality;
  head.input = config.input;
  head.windowing = config.windowing;

  if (config.kind == "mlp") {
    MlpHead model(dim, config.descriptor_size, rng, config.batchnorm,
                  config.dropout_keep);
    Matrix inputs(static_cast<Index>(train.features.size()), dim);
    for (std::size_t e = 0; e < train.features.size(); ++e) {
      const Matrix& x = train.features[e][modality].values;
      if (config.input == HeadInput::kVector) {
        if (x.rows() != 1)
          throw DimensionError(
              str("head '", config.modality, "': entry '",
                  train.manifest.entries[e].video_id, "' has ", x.rows(),
                  " steps; mlp heads with 'vector' input need exactly 1"));
        inputs.row(static_cast<Index>(e)) = x.row(0);
      } else {
        inputs.row(static_cast<Index>(e)) = x.colwise().mean();
      }
    }
    HeadTrainConfig tc{config.epochs,
                       {config.learning_rate, config.momentum,
                        config.weight_decay},
                       config.batch, workers};
    log = train_mlp_head(model, inputs, train.labels(), tc, rng);
    head.model = std::move(model);
  } else if (config.kind == "lstm") {
    LstmOptions opts{config.bidirectional, config.layers, config.max_length,
                     config.dropout_keep};
    LstmHead model(dim, config.hidden_size, config.descriptor_size, opts, rng);
    std::vector<Matrix> sequences;
    sequences.reserve(train.features.size());
    for (std::size_t e = 0; e < train.features.size(); ++e) {
      const Matrix& x = train.features[e][modality].values;
      sequences.push_back(config.input == HeadInput::kFrames
                              ? x
                              : window_descriptors(x, config.windowing));
    }
    HeadTrainConfig tc{config.epochs,
                       {config.learning_rate, config.momentum,
                        config.weight_decay},
                       config.batch, workers};
    log = train_lstm_head(model, sequences, train.labels(), tc, rng);
    head.model = std::move(model);
  } else {  // window
    WindowHead model(dim, config.descriptor_size, rng, config.dropout_keep);
    std::vector<WindowedVideo> videos;
    videos.reserve(train.features.size());
    for (std::size_t e = 0; e < train.features.size(); ++e)
      videos.push_back(
          {train.manifest.entries[e].video_id,
           train.manifest.entries[e].label,
           window_descriptors(train.features[e][modality].values,
                              config.windowing)});
    WeightedWindowConfig wc;
    wc.weighted = config.mil;
    wc.phase1_epochs = config.mil ? config.phase1_epochs : 0;
    wc.phase2_epochs = config.mil ? config.epochs : config.epochs;
    wc.schedule = config.temperature;
    wc.sgd = {config.learning_rate, config.momentum, config.weight_decay};
    wc.batch_videos = config.batch;
    wc.dropout_keep = config.dropout_keep;
    wc.workers = workers;
    log = train_weighted_windows(model, videos, wc, rng);
    head.model = std::move(model);
  }
  return head;
}

Scalar set_accuracy(const std::vector<int>& preds,
                    const std::vector<int>& labels) {
  if (preds.empty()) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++correct;
  return Scalar(correct) / Scalar(preds.size());
}

std::vector<int> head_predictions(const ModalitySet& set, Index modality) {
  std::vector<int> preds(set.num_videos());
  for (std::size_t v = 0; v < set.num_videos(); ++v) {
    Index cls = 0;
    set.outputs[v][modality].scores.maxCoeff(&cls);
    preds[v] = static_cast<int>(cls);
  }
  return preds;
}

}  // namespace

// ---- evaluation ----------------------------------------------------------------------

EvalOutcome evaluate_bundle(ExperimentBundle& bundle, const LoadedSplit& split,
                            const std::string& fusion_mode, int workers) {
  ModalitySet set = compute_modality_outputs(bundle.heads, split, workers);
  std::string mode = fusion_mode;
  if (mode == "auto") {
    if (bundle.fusion_method != "none")
      mode = bundle.fusion_method;
    else if (bundle.heads.size() == 1)
      mode = "single";
    else
      mode = "mean";
  }

  EvalOutcome out;
  out.predictions.resize(set.num_videos());
  out.fused_scores.resize(set.num_videos());
  if (mode != "single" && set.num_modalities() < 2)
    throw ContractError(str("fusion mode '", mode,
                            "' needs at least two modalities; checkpoint has ",
                            set.num_modalities()));
  if (mode == "single") {
    for (std::size_t v = 0; v < set.num_videos(); ++v) {
      out.fused_scores[v] = set.outputs[v][0].scores;
      Index cls = 0;
      out.fused_scores[v].maxCoeff(&cls);
      out.predictions[v] = static_cast<int>(cls);
    }
  } else if (mode == "majority" || mode == "mean" || mode == "max") {
    BaselineFusion bf = baseline_fusion_from_string(mode);
    for (std::size_t v = 0; v < set.num_videos(); ++v) {
      auto scores = set.scores_of(v);
      out.predictions[v] = fuse_baseline(scores, bf);
      Vector mean = Vector::Zero(kNumClasses);
      for (const Vector& s : scores) mean += s;
      out.fused_scores[v] = mean / Scalar(scores.size());
    }
  } else if (mode == "weighted-mean") {
    if (bundle.weighted_mean_lambda.size() != set.num_modalities())
      throw ConfigError(
          "checkpoint carries no weighted-mean weights for this modality set");
    for (std::size_t v = 0; v < set.num_videos(); ++v) {
      auto [fused, cls] = fuse_weighted_mean(set.scores_of(v),
                                             bundle.weighted_mean_lambda);
      out.fused_scores[v] = fused;
      out.predictions[v] = cls;
    }
  } else if (mode == "moddrop") {
    if (bundle.moddrop.input_dims.empty())
      throw ConfigError("checkpoint carries no ModDrop fusion model");
    for (std::size_t v = 0; v < set.num_videos(); ++v) {
      std::vector<Vector> descriptors;
      for (Index m = 0; m < set.num_modalities(); ++m)
        descriptors.push_back(set.outputs[v][m].descriptor);
      out.fused_scores[v] =
          moddrop_forward(bundle.moddrop, descriptors, /*train=*/false);
      Index cls = 0;
      out.fused_scores[v].maxCoeff(&cls);
      out.predictions[v] = static_cast<int>(cls);
    }
  } else if (mode == "score-tree") {
    if (bundle.score_tree.feature_classifiers.empty())
      throw ConfigError("checkpoint carries no Score Tree fusion model");
    for (std::size_t v = 0; v < set.num_videos(); ++v) {
      std::vector<Vector> descriptors;
      for (Index m = 0; m < set.num_modalities(); ++m)
        descriptors.push_back(set.outputs[v][m].descriptor);
      out.fused_scores[v] = score_tree_forward(bundle.score_tree, descriptors,
                                               set.scores_of(v));
      Index cls = 0;
      out.fused_scores[v].maxCoeff(&cls);
      out.predictions[v] = static_cast<int>(cls);
    }
  } else {
    throw ConfigError(str("unknown fusion mode '", mode, "'"));
  }

  out.metrics = MetricsReport::from_predictions(set.labels, out.predictions);
  for (Index m = 0; m < set.num_modalities(); ++m)
    out.head_accuracy[set.modality_names[m]] =
        set_accuracy(head_predictions(set, m), set.labels);
  return out;
}

// ---- training pipeline ---------------------------------------------------------------

TrainOutcome run_training(const std::string& config_text,
                          const std::string& config_dir,
                          const std::string& out_dir,
                          std::optional<std::uint64_t> seed_override,
                          std::optional<int> workers_override,
                          std::ostream& log) {
  ExperimentConfig config = parse_experiment_config(config_text, config_dir);
  if (seed_override) config.seed = *seed_override;
  if (workers_override) config.workers = *workers_override;
  fs::create_directories(fs::path(out_dir) / "logs");

  LoadedSplit train = load_split(config.train_manifest);
  std::optional<LoadedSplit> val;
  if (!config.val_manifest.empty()) val = load_split(config.val_manifest);
  log << "loaded train split '" << train.manifest.split << "' with "
      << train.manifest.entries.size() << " videos\n";

  ExperimentBundle bundle;
  bundle.fusion_method = config.fusion.method;
  for (std::size_t h = 0; h < config.heads.size(); ++h) {
    TrainingLog head_log;
    std::uint64_t head_seed = mix_seed(config.seed, h + 1);
    TrainedHead trained =
        train_head(config.heads[h], train, config.workers, head_seed,
                   head_log);
    head_log.write_csv((fs::path(out_dir) / "logs" /
                        str("head_", trained.modality, ".csv"))
                           .string());
    if (!head_log.rows.empty())
      log << "head '" << trained.modality << "': final train accuracy "
          << head_log.rows.back().back() << "\n";
    bundle.heads.push_back(std::move(trained));
  }

  ModalitySet train_outputs =
      compute_modality_outputs(bundle.heads, train, config.workers);
  std::optional<ModalitySet> val_outputs;
  if (val)
    val_outputs = compute_modality_outputs(bundle.heads, *val, config.workers);

  const FusionConfig& f = config.fusion;
  Rng fusion_rng(mix_seed(config.seed, 0x7a57ULL));
  if (f.method == "moddrop") {
    bundle.moddrop = ModDropFusion(train_outputs.descriptor_dims,
                                   f.hidden_total, fusion_rng,
                                   f.drop_probability);
    FusionTrainConfig tc;
    tc.epochs = f.epochs;
    tc.sgd = {f.learning_rate, f.momentum, 0.0};
    tc.batch = f.batch;
    tc.gamma = f.gamma;
    tc.use_penalty = f.use_penalty;
    tc.use_modality_drop = f.use_modality_drop;
    tc.workers = config.workers;
    TrainingLog flog = train_moddrop(bundle.moddrop, train_outputs, tc,
                                     fusion_rng);
    flog.write_csv((fs::path(out_dir) / "logs" / "fusion.csv").string());
  } else if (f.method == "score-tree") {
    bundle.score_tree = ScoreTreeFusion(train_outputs.descriptor_dims,
                                        fusion_rng);
    FusionTrainConfig tc;
    tc.epochs = f.epochs;
    tc.sgd = {f.learning_rate, f.momentum, 0.0};
    tc.batch = f.batch;
    tc.workers = config.workers;
    TrainingLog flog = train_score_tree(bundle.score_tree, train_outputs, tc,
                                        fusion_rng);
    flog.write_csv((fs::path(out_dir) / "logs" / "fusion.csv").string());
  } else if (f.method == "weighted-mean") {
    const ModalitySet& search_set =
        val_outputs ? *val_outputs : train_outputs;
    bundle.weighted_mean_lambda = search_weighted_mean(search_set,
                                                       f.grid_step);
    log << "weighted-mean lambda:";
    for (Index k = 0; k < bundle.weighted_mean_lambda.size(); ++k)
      log << " " << bundle.weighted_mean_lambda(k);
    log << "\n";
  }

  TrainOutcome outcome;
  outcome.checkpoint_path = (fs::path(out_dir) / "model.tmf").string();
  save_bundle(outcome.checkpoint_path, bundle);

  std::string eval_mode =
      bundle.fusion_method == "none" ? "auto" : bundle.fusion_method;
  EvalOutcome train_eval =
      evaluate_bundle(bundle, train, eval_mode, config.workers);
  outcome.train_accuracy = train_eval.metrics.accuracy;
  log << "train accuracy (" << eval_mode << "): "
      << train_eval.metrics.accuracy << "\n";
  if (val) {
    EvalOutcome val_eval =
        evaluate_bundle(bundle, *val, eval_mode, config.workers);
    outcome.val_accuracy = val_eval.metrics.accuracy;
    outcome.head_val_accuracy = val_eval.head_accuracy;
    log << "val accuracy (" << eval_mode << "): " << val_eval.metrics.accuracy
        << "\n";
    for (const auto& [name, acc] : val_eval.head_accuracy)
      log << "  modality '" << name << "' alone: " << acc << "\n";
  }
  return outcome;
}

// ---- grid search ------------------------------------------------------------------------

namespace {

struct GridParameter {
  std::string path;  // JSON pointer
  std::string kind;  // log_uniform | uniform | choice | int_uniform
  Scalar low = 0.0;
  Scalar high = 0.0;
  std::vector<json> values;
};

struct GridSpec {
  std::uint64_t seed = 1;
  int trials = 1;
  std::vector<GridParameter> parameters;
};

GridSpec parse_grid_spec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(str("grid spec: ", e.what()));
  }
  if (get_or<int>(j, "version", 0) != 1)
    throw ConfigError("grid spec: missing or unsupported version");
  GridSpec spec;
  spec.seed = get_or<std::uint64_t>(j, "seed", 1);
  spec.trials = get_or<int>(j, "trials", 1);
  if (spec.trials < 1)
    throw ConfigError(str("grid spec: trials must be >= 1, got ",
                          spec.trials));
  if (!j.contains("parameters") || !j.at("parameters").is_array())
    throw ConfigError("grid spec: 'parameters' array is required");
  for (const json& jp : j.at("parameters")) {
    GridParameter p;
    p.path = get_or<std::string>(jp, "path", "");
    p.kind = get_or<std::string>(jp, "kind", "");
    if (p.path.empty() || p.path[0] != '/')
      throw ConfigError(str("grid spec: parameter path '", p.path,
                            "' must be a JSON pointer"));
    if (p.kind == "log_uniform" || p.kind == "uniform" ||
        p.kind == "int_uniform") {
      p.low = get_or<Scalar>(jp, "low", std::numeric_limits<Scalar>::quiet_NaN());
      p.high = get_or<Scalar>(jp, "high", std::numeric_limits<Scalar>::quiet_NaN());
      if (!(p.low < p.high))
        throw ConfigError(str("grid spec: '", p.path,
                              "' needs ordered bounds low < high"));
      if (p.kind == "log_uniform" && !(p.low > 0.0))
        throw ConfigError(str("grid spec: '", p.path,
                              "' log_uniform needs low > 0"));
    } else if (p.kind == "choice") {
      if (!jp.contains("values") || !jp.at("values").is_array() ||
          jp.at("values").empty())
        throw ConfigError(str("grid spec: '", p.path,
                              "' choice needs non-empty values"));
      for (const json& v : jp.at("values")) p.values.push_back(v);
    } else {
      throw ConfigError(str("grid spec: unknown parameter kind '", p.kind,
                            "'"));
    }
    spec.parameters.push_back(std::move(p));
  }
  return spec;
}

std::vector<json> sample_trials(const GridSpec& spec, const json& base) {
  Rng rng(spec.seed);
  std::vector<json> trials;
  for (int t = 0; t < spec.trials; ++t) {
    json config = base;
    for (const GridParameter& p : spec.parameters) {
      json::json_pointer ptr(p.path);
      if (p.kind == "choice") {
        std::uniform_int_distribution<std::size_t> pick(0,
                                                        p.values.size() - 1);
        config[ptr] = p.values[pick(rng)];
      } else if (p.kind == "uniform") {
        std::uniform_real_distribution<Scalar> dist(p.low, p.high);
        config[ptr] = dist(rng);
      } else if (p.kind == "int_uniform") {
        std::uniform_int_distribution<long long> dist(
            static_cast<long long>(p.low), static_cast<long long>(p.high));
        config[ptr] = dist(rng);
      } else {  // log_uniform
        std::uniform_real_distribution<Scalar> dist(std::log(p.low),
                                                    std::log(p.high));
        config[ptr] = std::exp(dist(rng));
      }
    }
    trials.push_back(std::move(config));
  }
  return trials;
}

}  // namespace

// ---- CLI ---------------------------------------------------------------------------------

namespace cli {

namespace {

int cmd_synth(const std::string& spec_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, const SyntheticCounts& counts,
              int workers, std::ostream& out) {
  SyntheticSpec spec = load_synthetic_spec(spec_path);
  if (seed) spec.seed = *seed;
  SyntheticDataset data = generate_synthetic(spec, counts, out_dir, workers);
  out << "wrote " << out_dir << " with " << data.train.entries.size()
      << " train / " << data.val.entries.size() << " val / "
      << data.test.entries.size() << " test videos\n";
  out << "train distribution:\n" << class_distribution(data.train).to_text();
  if (!data.val.entries.empty()) {
    out << "likelihood-oracle accuracy on val:\n";
    out << "  joint " << bayes_accuracy(data.oracle, data.val) << "\n";
    for (Index m = 0; m < static_cast<Index>(spec.modalities.size()); ++m)
      out << "  " << spec.modalities[m].name << " alone "
          << bayes_accuracy(data.oracle, data.val, {m}) << "\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path,
              std::optional<std::uint64_t> seed,
              std::optional<std::string> out_dir,
              std::optional<int> workers, std::ostream& out) {
  std::ifstream is(config_path);
  if (!is) throw IoError(str("cannot open '", config_path, "'"));
  std::string text(std::istreambuf_iterator<char>(is), {});
  std::string dir = fs::path(config_path).parent_path().string();
  std::string destination =
      out_dir ? *out_dir
              : (fs::path(config_path).parent_path() / "run").string();
  TrainOutcome outcome =
      run_training(text, dir, destination, seed, workers, out);
  out << "checkpoint " << outcome.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest,
             const std::string& fusion_mode,
             std::optional<std::string> out_dir, int workers,
             std::ostream& out) {
  ExperimentBundle bundle = load_bundle(checkpoint);
  LoadedSplit split = load_split(manifest);
  EvalOutcome eval = evaluate_bundle(bundle, split, fusion_mode, workers);
  out << eval.metrics.to_text();
  for (const auto& [name, acc] : eval.head_accuracy)
    out << "modality '" << name << "' alone: " << acc << "\n";
  if (out_dir) {
    fs::create_directories(*out_dir);
    eval.metrics.write_confusion_csv(
        (fs::path(*out_dir) / "confusion.csv").string());
    std::ofstream pred((fs::path(*out_dir) / "predictions.csv").string());
    pred << "video_id,predicted_class";
    for (int c = 0; c < kNumClasses; ++c)
      pred << ",score_" << emotion_name(c);
    pred << "\n";
    pred.precision(10);
    for (std::size_t v = 0; v < split.manifest.entries.size(); ++v) {
      pred << split.manifest.entries[v].video_id << ","
           << emotion_name(eval.predictions[v]);
      for (Index c = 0; c < kNumClasses; ++c)
        pred << "," << eval.fused_scores[v](c);
      pred << "\n";
    }
    std::ofstream report((fs::path(*out_dir) / "metrics.txt").string());
    report << eval.metrics.to_text();
  }
  return 0;
}

int cmd_grid_search(const std::string& grid_path,
                    const std::string& config_path,
                    const std::string& out_dir, std::optional<int> workers,
                    std::ostream& out) {
  std::ifstream gs(grid_path);
  if (!gs) throw IoError(str("cannot open '", grid_path, "'"));
  std::string grid_text(std::istreambuf_iterator<char>(gs), {});
  std::ifstream cs(config_path);
  if (!cs) throw IoError(str("cannot open '", config_path, "'"));
  std::string config_text(std::istreambuf_iterator<char>(cs), {});
  json base;
  try {
    base = json::parse(config_text);
  } catch (const json::exception& e) {
    throw ConfigError(str("config: ", e.what()));
  }
  GridSpec spec = parse_grid_spec(grid_text);
  std::vector<json> trials = sample_trials(spec, base);
  std::string config_dir = fs::path(config_path).parent_path().string();
  fs::create_directories(out_dir);

  struct TrialResult {
    int index = 0;
    bool failed = false;
    std::string error;
    Scalar val_accuracy = std::numeric_limits<Scalar>::quiet_NaN();
    Scalar train_accuracy = std::numeric_limits<Scalar>::quiet_NaN();
  };
  std::vector<TrialResult> results(trials.size());
  int trial_workers = workers.value_or(1);
  parallel_for(static_cast<Index>(trials.size()), trial_workers, [&](Index t) {
    TrialResult& r = results[t];
    r.index = static_cast<int>(t);
    std::string trial_dir =
        (fs::path(out_dir) / str("trial_", t)).string();
    std::ostringstream quiet;
    try {
      TrainOutcome o = run_training(trials[t].dump(), config_dir, trial_dir,
                                    std::nullopt, std::optional<int>(1),
                                    quiet);
      r.val_accuracy = o.val_accuracy;
      r.train_accuracy = o.train_accuracy;
    } catch (const std::exception& e) {
      r.failed = true;
      r.error = e.what();
    }
  });

  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     Scalar va = results[a].failed ? -1.0
                                                   : results[a].val_accuracy;
                     Scalar vb = results[b].failed ? -1.0
                                                   : results[b].val_accuracy;
                     return va > vb;
                   });

  std::ofstream csv((fs::path(out_dir) / "trials.csv").string());
  csv << "rank,trial,status,val_accuracy,train_accuracy\n";
  csv.precision(10);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const TrialResult& r = results[order[rank]];
    csv << rank << "," << r.index << ","
        << (r.failed ? "failed" : "ok") << ",";
    if (r.failed)
      csv << ",";
    else
      csv << r.val_accuracy << "," << r.train_accuracy;
    csv << "\n";
  }
  const TrialResult& best = results[order[0]];
  if (!best.failed) {
    std::ofstream bc((fs::path(out_dir) / "best_config.json").string());
    bc << trials[best.index].dump(2) << "\n";
    out << "best trial " << best.index << " val accuracy "
        << best.val_accuracy << "\n";
  } else {
    out << "all trials failed; first error: " << best.error << "\n";
  }
  out << "ranked table " << (fs::path(out_dir) / "trials.csv").string()
      << "\n";
  return 0;
}

int cmd_select(const std::vector<std::string>& checkpoints,
               const std::string& manifest_path, int k, Scalar w_acc,
               Scalar w_div, std::optional<std::string> out_dir,
               int workers, std::ostream& out) {
  if (k < 1 || static_cast<std::size_t>(k) > checkpoints.size())
    throw ContractError(str("select: k = ", k, " with ", checkpoints.size(),
                            " models"));
  LoadedSplit split = load_split(manifest_path);

  struct Candidate {
    std::string path;
    Scalar accuracy = 0.0;
    Matrix confusion;
  };
  std::vector<Candidate> candidates(checkpoints.size());
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    ExperimentBundle bundle = load_bundle(checkpoints[i]);
    EvalOutcome eval = evaluate_bundle(bundle, split, "auto", workers);
    candidates[i] = {checkpoints[i], eval.metrics.accuracy,
                     row_normalize_confusion(eval.metrics.confusion)};
  }

  std::vector<bool> chosen(candidates.size(), false);
  std::vector<std::size_t> picks;
  std::ostringstream table;
  table << "step,model,accuracy,mean_dissimilarity,score\n";
  table.precision(10);
  for (int step = 0; step < k; ++step) {
    int best = -1;
    Scalar best_score = 0.0;
    Scalar best_div = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (chosen[i]) continue;
      Scalar div = 0.0;
      for (std::size_t j : picks)
        div += confusion_dissimilarity(candidates[i].confusion,
                                       candidates[j].confusion);
      if (!picks.empty()) div /= Scalar(picks.size());
      Scalar score = w_acc * candidates[i].accuracy + w_div * div;
      bool take = best < 0 || score > best_score ||
                  (score == best_score &&
                   candidates[i].path < candidates[best].path);
      if (take) {
        best = static_cast<int>(i);
        best_score = score;
        best_div = div;
      }
    }
    chosen[best] = true;
    picks.push_back(best);
    table << step << "," << candidates[best].path << ","
          << candidates[best].accuracy << "," << best_div << ","
          << best_score << "\n";
  }
  out << "selected:\n";
  for (std::size_t i : picks)
    out << "  " << candidates[i].path << " (accuracy "
        << candidates[i].accuracy << ")\n";
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream os((fs::path(*out_dir) / "selection.csv").string());
    os << table.str();
  } else {
    out << table.str();
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"temporal multimodal fusion toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string spec_path, synth_out = "synth";
  std::optional<std::uint64_t> synth_seed;
  SyntheticCounts counts{.train = 70, .val = 35, .test = 35};
  int synth_workers = 1;
  synth->add_option("--spec", spec_path, "synthetic spec JSON")->required();
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", synth_seed, "override the spec seed");
  synth->add_option("--train", counts.train, "train video count");
  synth->add_option("--val", counts.val, "validation video count");
  synth->add_option("--test", counts.test, "test video count");
  synth->add_option("--workers", synth_workers, "generator threads");

  // train
  auto* train = app.add_subcommand("train", "train heads and fusion");
  std::string config_path;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> train_out;
  std::optional<int> train_workers;
  train->add_option("--config", config_path, "experiment config JSON")
      ->required();
  train->add_option("--seed", train_seed, "override the config seed");
  train->add_option("--out", train_out, "output directory");
  train->add_option("--workers", train_workers, "worker threads");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint, manifest, fusion_mode = "auto";
  std::optional<std::string> eval_out;
  int eval_workers = 1;
  eval->add_option("--checkpoint", checkpoint, "TMF1 checkpoint")->required();
  eval->add_option("--manifest", manifest, "dataset manifest")->required();
  eval->add_option("--fusion", fusion_mode,
                   "majority|mean|max|weighted-mean|moddrop|score-tree|auto");
  eval->add_option("--out", eval_out, "directory for CSV reports");
  eval->add_option("--workers", eval_workers, "worker threads");

  // grid-search
  auto* grid = app.add_subcommand("grid-search",
                                  "random search over hyper-parameters");
  std::string grid_path, grid_config, grid_out = "grid";
  std::optional<int> grid_workers;
  grid->add_option("--grid", grid_path, "grid spec JSON")->required();
  grid->add_option("--config", grid_config, "base experiment config")
      ->required();
  grid->add_option("--out", grid_out, "output directory");
  grid->add_option("--workers", grid_workers, "parallel trials");

  // select
  auto* select = app.add_subcommand(
      "select", "pick complementary models by confusion dissimilarity");
  std::vector<std::string> select_checkpoints;
  std::string select_manifest;
  int select_k = 1, select_workers = 1;
  Scalar w_acc = 1.0, w_div = 1.0;
  std::optional<std::string> select_out;
  select->add_option("--checkpoint", select_checkpoints,
                     "candidate checkpoints (repeatable)")
      ->required();
  select->add_option("--manifest", select_manifest, "validation manifest")
      ->required();
  select->add_option("--k", select_k, "number of models to choose");
  select->add_option("--w-acc", w_acc, "accuracy weight");
  select->add_option("--w-div", w_div, "dissimilarity weight");
  select->add_option("--out", select_out, "directory for the rationale table");
  select->add_option("--workers", select_workers, "worker threads");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (synth->parsed())
      return cmd_synth(spec_path, synth_out, synth_seed, counts,
                       synth_workers, out);
    if (train->parsed())
      return cmd_train(config_path, train_seed, train_out, train_workers,
                       out);
    if (eval->parsed())
      return cmd_eval(checkpoint, manifest, fusion_mode, eval_out,
                      eval_workers, out);
    if (grid->parsed())
      return cmd_grid_search(grid_path, grid_config, grid_out, grid_workers,
                             out);
    if (select->parsed())
      return cmd_select(select_checkpoints, select_manifest, select_k, w_acc,
                        w_div, select_out, select_workers, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << "error: no subcommand\n";
  return 1;
}

}  // namespace cli

}  // namespace tmf
