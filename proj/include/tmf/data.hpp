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

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "tmf/temporal.hpp"
#include "tmf/types.hpp"

namespace tmf {

// ---- emotion labels ---------------------------------------------------------

// The seven classes, in canonical index order 0..6.
const std::array<std::string, kNumClasses>& emotion_names();
// Case-insensitive lookup; unknown names are rejected (closed label set).
int emotion_index(const std::string& name);
const std::string& emotion_name(int index);

// ---- feature files ("TMFF") ---------------------------------------------------

struct DescriptorSequence {
  std::string modality;
  Matrix values;  // T x dim, promoted to double in memory
};

// Binary layout: magic "TMFF", u32 version, u32 name length, name bytes,
// u32 dim, u32 length, then length*dim little-endian float32, row-major.
void write_feature_file(const std::string& path, const DescriptorSequence& seq);
DescriptorSequence read_feature_file(const std::string& path);

// ---- dataset manifests ---------------------------------------------------------

struct ManifestEntry {
  std::string video_id;
  int label = 0;
  std::vector<std::string> feature_paths;  // relative, one per modality
};

struct DatasetManifest {
  std::string split;
  std::vector<std::string> modality_names;
  std::vector<Index> modality_dims;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // resolved against at load/write time

  std::string feature_path(std::size_t entry, Index modality) const;
  Index modality_index(const std::string& name) const;
};

// Line-delimited text, schema "TMFM 1". Validates labels, duplicate ids and
// the existence of every referenced feature file.
DatasetManifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& manifest);

// ---- class bookkeeping -----------------------------------------------------------

struct ClassDistribution {
  std::array<int, kNumClasses> counts{};
  int total = 0;

  Scalar percent(int cls) const;
  std::string to_text() const;  // one "Name count (pct %)" line per class
};

ClassDistribution class_distribution(const DatasetManifest& manifest);

// Seeded per-class shuffle; the first split receives round(fraction * n_c)
// videos of each class, so proportions hold within one video per class.
std::pair<DatasetManifest, DatasetManifest> stratified_split(
    const DatasetManifest& manifest, Scalar fraction, Rng& rng);

// ---- synthetic data with a likelihood oracle -----------------------------------------

struct SyntheticModalitySpec {
  std::string name;
  Index dim = 16;
  // Classes this modality can see; others emit pure neutral frames.
  std::vector<int> informative_classes;
  bool is_sequence = true;
  Index min_windows = 2;  // sequence modalities only
  Index max_windows = 6;
};

struct SyntheticSpec {
  Scalar signal_fraction = 0.25;  // fraction of windows carrying the signal
  Scalar noise = 0.5;
  Index window_length = 16;
  std::uint64_t seed = 1;
  std::vector<SyntheticModalitySpec> modalities;

  void validate() const;
};

struct SyntheticCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

struct OracleVideo {
  std::string id;
  std::string split;
  int label = 0;
  // Sampled signal-window indices per modality (sampled for sequence
  // modalities whether or not the class is informative there; empty for
  // static modalities).
  std::vector<std::vector<Index>> signal_windows;
};

// Everything needed to evaluate exact per-class likelihoods of the
// generated data: the spec, the drawn prototypes, and where the signal was
// planted.
struct OracleRecord {
  SyntheticSpec spec;
  std::vector<Vector> neutral_prototypes;             // per modality
  std::vector<std::vector<Vector>> class_prototypes;  // [modality][class]
  std::vector<OracleVideo> videos;

  const OracleVideo& video(const std::string& id) const;
};

struct SyntheticDataset {
  DatasetManifest train;
  DatasetManifest val;
  DatasetManifest test;
  OracleRecord oracle;
};

// Materializes manifests + feature files under out_dir (features/ subtree)
// and the oracle record at out_dir/oracle.json. Labels cycle through the
// classes, so per-split histograms are exact. Deterministic per seed; safe
// to parallelize because every video derives its own rng stream.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec,
                                    const SyntheticCounts& counts,
                                    const std::string& out_dir,
                                    int workers = 1);

void write_oracle(const std::string& path, const OracleRecord& record);
OracleRecord read_oracle(const std::string& path);

SyntheticSpec load_synthetic_spec(const std::string& path);
void write_synthetic_spec(const std::string& path, const SyntheticSpec& spec);

// Accuracy of the maximum-likelihood decision rule over the given split,
// using only the listed modalities (all when empty). The rule knows the
// generating prototypes, the noise level, and the planted signal positions,
// so it upper-bounds what any trained model can reach in expectation.
Scalar bayes_accuracy(const OracleRecord& oracle,
                      const DatasetManifest& split,
                      const std::vector<Index>& modality_subset = {});

}  // namespace tmf
