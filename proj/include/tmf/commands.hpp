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

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tmf/metrics.hpp"
#include "tmf/model_io.hpp"
#include "tmf/types.hpp"

namespace tmf {

// A manifest with every referenced feature sequence loaded into memory.
struct LoadedSplit {
  DatasetManifest manifest;
  std::vector<std::vector<DescriptorSequence>> features;  // [video][modality]

  std::vector<int> labels() const;
};

LoadedSplit load_split(const std::string& manifest_path);

// Per-video outputs of every head over a split, ready for fusion.
ModalitySet compute_modality_outputs(std::vector<TrainedHead>& heads,
                                     const LoadedSplit& split, int workers);

struct TrainOutcome {
  std::string checkpoint_path;
  Scalar val_accuracy = -1.0;    // fused (or single-head) accuracy, if val given
  Scalar train_accuracy = -1.0;  // same rule on the training split
  std::map<std::string, Scalar> head_val_accuracy;
};

// Runs the full training pipeline described by a config JSON document:
// trains every head, computes frozen modality outputs, fits/searches the
// fusion stage, and writes logs + a TMF1 bundle under out_dir. Relative
// paths inside the config resolve against config_dir.
TrainOutcome run_training(const std::string& config_text,
                          const std::string& config_dir,
                          const std::string& out_dir,
                          std::optional<std::uint64_t> seed_override,
                          std::optional<int> workers_override,
                          std::ostream& log);

// Predictions of a bundle over a split under the given fusion mode
// ("auto" picks the bundle's own fusion, a lone head, or mean).
struct EvalOutcome {
  std::vector<int> predictions;
  std::vector<Vector> fused_scores;
  MetricsReport metrics;
  std::map<std::string, Scalar> head_accuracy;
};

EvalOutcome evaluate_bundle(ExperimentBundle& bundle, const LoadedSplit& split,
                            const std::string& fusion_mode, int workers);

namespace cli {

// Entry point shared by the binary and the tests. Returns the process exit
// code: 0 success, 1 config/validation error, 2 runtime error.
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace cli

}  // namespace tmf
