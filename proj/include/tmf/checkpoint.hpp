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

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tmf/types.hpp"

namespace tmf {

// One serialized model inside a TMF1 checkpoint: a text manifest
// (kind + hyper-parameters + block shapes) followed, after the whole
// manifest, by raw little-endian float64 payloads in declared order.
struct CheckpointBlock {
  std::string name;
  Matrix value;
};

struct ModelRecord {
  std::string name;
  std::string kind;
  std::map<std::string, std::string> hparams;
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock& block(const std::string& block_name) const;
  const std::string& hparam(const std::string& key) const;
};

void write_checkpoint(const std::string& path,
                      std::span<const ModelRecord> models);
std::vector<ModelRecord> read_checkpoint(const std::string& path);

}  // namespace tmf
