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
#include <variant>
#include <vector>

#include "tmf/checkpoint.hpp"
#include "tmf/data.hpp"
#include "tmf/fusion.hpp"
#include "tmf/temporal.hpp"

namespace tmf {

// How a stored head turns a raw descriptor sequence into its input.
enum class HeadInput {
  kVector,   // T must be 1; the single row is the input vector
  kMean,     // mean over frames
  kFrames,   // the raw sequence
  kWindows,  // window-mean descriptors via the windowing spec
};

HeadInput head_input_from_string(const std::string& s);
std::string to_string(HeadInput in);

// A trained per-modality head plus the input transform it expects.
struct TrainedHead {
  std::string modality;
  HeadInput input = HeadInput::kVector;
  WindowingSpec windowing;  // used by kWindows
  std::variant<MlpHead, LstmHead, WindowHead> model;

  Index descriptor_size();
  ModalityOutput infer(const DescriptorSequence& sequence);
};

// Checkpoint record conversion. Head records are named "head.<modality>".
ModelRecord head_to_record(TrainedHead& head);
TrainedHead head_from_record(const ModelRecord& record);

ModelRecord moddrop_to_record(const ModDropFusion& model);
ModDropFusion moddrop_from_record(const ModelRecord& record);

ModelRecord score_tree_to_record(ScoreTreeFusion& model);
ScoreTreeFusion score_tree_from_record(const ModelRecord& record);

ModelRecord weighted_mean_to_record(const Vector& lambda);
Vector weighted_mean_from_record(const ModelRecord& record);

// The whole artifact cmd_train produces and cmd_eval consumes.
struct ExperimentBundle {
  std::vector<TrainedHead> heads;
  std::string fusion_method;  // "none", "majority", ..., "moddrop", ...
  ModDropFusion moddrop;
  ScoreTreeFusion score_tree;
  Vector weighted_mean_lambda;

  TrainedHead& head(const std::string& modality);
};

void save_bundle(const std::string& path, ExperimentBundle& bundle);
ExperimentBundle load_bundle(const std::string& path);

}  // namespace tmf
