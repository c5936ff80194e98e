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

#include "tmf/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tmf/parallel.hpp"

namespace tmf {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- labels -------------------------------------------------------------------

const std::array<std::string, kNumClasses>& emotion_names() {
  static const std::array<std::string, kNumClasses> names = {
      "Angry", "Disgust", "Fear", "Happy", "Sad", "Neutral", "Surprise"};
  return names;
}

namespace {

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(unsigned(c)));
  return s;
}

}  // namespace

int emotion_index(const std::string& name) {
  std::string needle = lowercase(name);
  const auto& names = emotion_names();
  for (int i = 0; i < kNumClasses; ++i)
    if (lowercase(names[i]) == needle) return i;
  throw ConfigError(str("unknown emotion label '", name, "'"));
}

const std::string& emotion_name(int index) {
  if (index < 0 || index >= kNumClasses)
    throw IndexError(str("emotion index ", index, " out of range [0, ",
                         kNumClasses, ")"));
  return emotion_names()[index];
}

// ---- feature files ----------------------------------------------------------------

namespace {

constexpr char kFeatureMagic[4] = {'T', 'M', 'F', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) |
         (v >> 24);
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32_le(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  return v;
}

void write_f32_le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  if constexpr (std::endian::native == std::endian::big)
    bits = byteswap32(bits);
  os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
}

float read_f32_le(std::istream& is) {
  std::uint32_t bits = read_u32_le(is);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

void write_feature_file(const std::string& path,
                        const DescriptorSequence& seq) {
  if (seq.values.rows() < 1 || seq.values.cols() < 1)
    throw ContractError(str("feature file '", path,
                            "': sequence must be non-empty, got ",
                            seq.values.rows(), "x", seq.values.cols()));
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os.write(kFeatureMagic, 4);
  write_u32_le(os, kFeatureVersion);
  write_u32_le(os, static_cast<std::uint32_t>(seq.modality.size()));
  os.write(seq.modality.data(),
           static_cast<std::streamsize>(seq.modality.size()));
  write_u32_le(os, static_cast<std::uint32_t>(seq.values.cols()));
  write_u32_le(os, static_cast<std::uint32_t>(seq.values.rows()));
  for (Index t = 0; t < seq.values.rows(); ++t)
    for (Index d = 0; d < seq.values.cols(); ++d)
      write_f32_le(os, static_cast<float>(seq.values(t, d)));
  if (!os) throw IoError(str("write to '", path, "' failed"));
}

DescriptorSequence read_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str("cannot open '", path, "'"));
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw FormatError(str("'", path, "' is not a TMFF feature file"));
  std::uint32_t version = read_u32_le(is);
  if (version != kFeatureVersion)
    throw FormatError(str("'", path, "': unsupported TMFF version ", version));
  std::uint32_t name_len = read_u32_le(is);
  if (!is || name_len > 4096)
    throw FormatError(str("'", path, "': implausible modality name length"));
  DescriptorSequence seq;
  seq.modality.resize(name_len);
  is.read(seq.modality.data(), name_len);
  std::uint32_t dim = read_u32_le(is);
  std::uint32_t length = read_u32_le(is);
  if (!is || dim == 0 || length == 0)
    throw FormatError(str("'", path, "': bad TMFF header (dim ", dim,
                          ", length ", length, ")"));
  seq.values.resize(length, dim);
  for (std::uint32_t t = 0; t < length; ++t)
    for (std::uint32_t d = 0; d < dim; ++d) {
      seq.values(t, d) = static_cast<Scalar>(read_f32_le(is));
      if (!is)
        throw FormatError(str("'", path, "': payload shorter than header ",
                              "claims (", length, "x", dim, ")"));
    }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError(str("'", path, "': trailing bytes after payload"));
  return seq;
}

// ---- manifests ------------------------------------------------------------------------

std::string DatasetManifest::feature_path(std::size_t entry,
                                          Index modality) const {
  return (base_dir / entries[entry].feature_paths[modality]).string();
}

Index DatasetManifest::modality_index(const std::string& name) const {
  for (std::size_t m = 0; m < modality_names.size(); ++m)
    if (modality_names[m] == name) return static_cast<Index>(m);
  throw ConfigError(str("manifest has no modality '", name, "'"));
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open '", path, "'"));
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path();
  std::string line;
  if (!std::getline(is, line))
    throw FormatError(str("'", path, "' is empty"));
  {
    std::istringstream ls(line);
    std::string magic;
    int version = -1;
    ls >> magic >> version;
    if (magic != "TMFM")
      throw FormatError(str("'", path, "' is not a TMFM manifest"));
    if (version != 1)
      throw FormatError(str("'", path, "': unsupported schema version ",
                            version));
  }
  std::set<std::string> seen_ids;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "split") {
      ls >> m.split;
    } else if (tag == "modality") {
      std::string name;
      Index dim = -1;
      ls >> name >> dim;
      if (name.empty() || dim < 1)
        throw FormatError(str("'", path, "' line ", line_no,
                              ": bad modality declaration"));
      if (!m.entries.empty())
        throw FormatError(str("'", path, "' line ", line_no,
                              ": modality declared after entries"));
      m.modality_names.push_back(name);
      m.modality_dims.push_back(dim);
    } else if (tag == "entry") {
      ManifestEntry e;
      std::string label;
      ls >> e.video_id >> label;
      if (e.video_id.empty() || label.empty())
        throw FormatError(str("'", path, "' line ", line_no, ": bad entry"));
      e.label = emotion_index(label);  // ConfigError on unknown labels
      std::string feature;
      while (ls >> feature) e.feature_paths.push_back(feature);
      if (e.feature_paths.size() != m.modality_names.size())
        throw FormatError(str("'", path, "' line ", line_no, ": entry '",
                              e.video_id, "' lists ", e.feature_paths.size(),
                              " features for ", m.modality_names.size(),
                              " modalities"));
      if (!seen_ids.insert(e.video_id).second)
        throw FormatError(str("'", path, "': duplicate video id '",
                              e.video_id, "'"));
      m.entries.push_back(std::move(e));
    } else {
      throw FormatError(str("'", path, "' line ", line_no, ": unknown tag '",
                            tag, "'"));
    }
  }
  if (m.modality_names.empty())
    throw FormatError(str("'", path, "': no modality declarations"));
  for (std::size_t e = 0; e < m.entries.size(); ++e)
    for (Index mod = 0; mod < static_cast<Index>(m.modality_names.size());
         ++mod)
      if (!fs::exists(m.feature_path(e, mod)))
        throw IoError(str("'", path, "': entry '", m.entries[e].video_id,
                          "' references missing feature file '",
                          m.feature_path(e, mod), "'"));
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os << "TMFM 1\n";
  os << "split " << manifest.split << "\n";
  for (std::size_t m = 0; m < manifest.modality_names.size(); ++m)
    os << "modality " << manifest.modality_names[m] << " "
       << manifest.modality_dims[m] << "\n";
  for (const ManifestEntry& e : manifest.entries) {
    os << "entry " << e.video_id << " " << emotion_name(e.label);
    for (const std::string& f : e.feature_paths) os << " " << f;
    os << "\n";
  }
  if (!os) throw IoError(str("write to '", path, "' failed"));
}

// ---- class bookkeeping -------------------------------------------------------------------

Scalar ClassDistribution::percent(int cls) const {
  if (total == 0) return 0.0;
  return 100.0 * Scalar(counts[cls]) / Scalar(total);
}

std::string ClassDistribution::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  for (int c = 0; c < kNumClasses; ++c)
    os << emotion_name(c) << " " << counts[c] << " (" << percent(c)
       << " %)\n";
  os << "Total " << total << "\n";
  return os.str();
}

ClassDistribution class_distribution(const DatasetManifest& manifest) {
  ClassDistribution d;
  for (const ManifestEntry& e : manifest.entries) {
    ++d.counts[e.label];
    ++d.total;
  }
  return d;
}

std::pair<DatasetManifest, DatasetManifest> stratified_split(
    const DatasetManifest& manifest, Scalar fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ConfigError(str("stratified split: fraction ", fraction,
                          " not in [0, 1]"));
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    by_class[manifest.entries[i].label].push_back(i);

  DatasetManifest a = manifest, b = manifest;
  a.entries.clear();
  b.entries.clear();
  a.split = manifest.split + "-a";
  b.split = manifest.split + "-b";
  for (int c = 0; c < kNumClasses; ++c) {
    auto& members = by_class[c];
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t take = static_cast<std::size_t>(
        std::llround(fraction * static_cast<Scalar>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k)
      (k < take ? a : b).entries.push_back(manifest.entries[members[k]]);
  }
  // Keep the original manifest order within each side.
  auto by_original = [&](const ManifestEntry& x, const ManifestEntry& y) {
    return x.video_id < y.video_id;
  };
  std::sort(a.entries.begin(), a.entries.end(), by_original);
  std::sort(b.entries.begin(), b.entries.end(), by_original);
  return {a, b};
}

// ---- synthetic generation -------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (modalities.empty())
    throw ConfigError("synthetic spec: no modalities declared");
  if (!(signal_fraction > 0.0) || signal_fraction > 1.0)
    throw ConfigError(str("synthetic spec: signal fraction ", signal_fraction,
                          " not in (0, 1]"));
  if (noise < 0.0)
    throw ConfigError(str("synthetic spec: negative noise ", noise));
  if (window_length < 1)
    throw ConfigError("synthetic spec: window length must be >= 1");
  std::set<std::string> names;
  for (const SyntheticModalitySpec& m : modalities) {
    if (m.name.empty() || m.name.find(' ') != std::string::npos)
      throw ConfigError(str("synthetic spec: bad modality name '", m.name,
                            "'"));
    if (!names.insert(m.name).second)
      throw ConfigError(str("synthetic spec: duplicate modality '", m.name,
                            "'"));
    if (m.dim < 1)
      throw ConfigError(str("synthetic spec: modality '", m.name,
                            "' has dim ", m.dim));
    for (int c : m.informative_classes)
      if (c < 0 || c >= kNumClasses)
        throw ConfigError(str("synthetic spec: modality '", m.name,
                              "' lists class ", c));
    if (m.is_sequence &&
        (m.min_windows < 1 || m.max_windows < m.min_windows))
      throw ConfigError(str("synthetic spec: modality '", m.name,
                            "' has window range [", m.min_windows, ", ",
                            m.max_windows, "]"));
  }
}

const OracleVideo& OracleRecord::video(const std::string& id) const {
  for (const OracleVideo& v : videos)
    if (v.id == id) return v;
  throw ContractError(str("oracle record has no video '", id, "'"));
}

namespace {

Vector gaussian_vector(Index dim, Rng& rng) {
  std::normal_distribution<Scalar> gauss(0.0, 1.0);
  Vector v(dim);
  for (Index i = 0; i < dim; ++i) v(i) = gauss(rng);
  return v;
}

bool informative_for(const SyntheticModalitySpec& m, int cls) {
  return std::find(m.informative_classes.begin(), m.informative_classes.end(),
                   cls) != m.informative_classes.end();
}

struct GeneratedVideo {
  OracleVideo oracle;
  std::vector<DescriptorSequence> features;  // per modality
};

GeneratedVideo generate_video(const SyntheticSpec& spec, const std::string& id,
                              const std::string& split, int label,
                              std::uint64_t video_seed) {
  Rng rng(video_seed);
  std::normal_distribution<Scalar> gauss(0.0, 1.0);
  GeneratedVideo out;
  out.oracle.id = id;
  out.oracle.split = split;
  out.oracle.label = label;

  // Prototypes are re-derived from the spec seed so every video agrees.
  Rng proto_rng(mix_seed(spec.seed, 0x9e3779b9ULL));
  std::vector<Vector> neutral;
  std::vector<std::vector<Vector>> protos;
  for (const SyntheticModalitySpec& m : spec.modalities) {
    neutral.push_back(gaussian_vector(m.dim, proto_rng));
    std::vector<Vector> per_class;
    for (int c = 0; c < kNumClasses; ++c)
      per_class.push_back(gaussian_vector(m.dim, proto_rng));
    protos.push_back(std::move(per_class));
  }

  for (std::size_t mi = 0; mi < spec.modalities.size(); ++mi) {
    const SyntheticModalitySpec& m = spec.modalities[mi];
    DescriptorSequence seq;
    seq.modality = m.name;
    std::vector<Index> signal;
    if (!m.is_sequence) {
      seq.values.resize(1, m.dim);
      const Vector& base =
          informative_for(m, label) ? protos[mi][label] : neutral[mi];
      for (Index d = 0; d < m.dim; ++d)
        seq.values(0, d) = base(d) + spec.noise * gauss(rng);
    } else {
      std::uniform_int_distribution<Index> win_count(m.min_windows,
                                                     m.max_windows);
      Index windows = win_count(rng);
      Index frames = windows * spec.window_length;
      // Signal positions are sampled for every sequence modality, informative
      // or not, so the likelihood model conditions on them uniformly.
      Index n_signal = std::max<Index>(
          1, std::llround(spec.signal_fraction * Scalar(windows)));
      std::vector<Index> order(windows);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      signal.assign(order.begin(), order.begin() + n_signal);
      std::sort(signal.begin(), signal.end());

      seq.values.resize(frames, m.dim);
      bool informative = informative_for(m, label);
      for (Index w = 0; w < windows; ++w) {
        bool is_signal =
            std::binary_search(signal.begin(), signal.end(), w) && informative;
        const Vector& base = is_signal ? protos[mi][label] : neutral[mi];
        for (Index f = w * spec.window_length;
             f < (w + 1) * spec.window_length; ++f)
          for (Index d = 0; d < m.dim; ++d)
            seq.values(f, d) = base(d) + spec.noise * gauss(rng);
      }
    }
    out.oracle.signal_windows.push_back(std::move(signal));
    out.features.push_back(std::move(seq));
  }
  return out;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec,
                                    const SyntheticCounts& counts,
                                    const std::string& out_dir, int workers) {
  spec.validate();
  if (counts.train < 1 || counts.val < 0 || counts.test < 0)
    throw ConfigError(str("synthetic counts: train=", counts.train, " val=",
                          counts.val, " test=", counts.test));
  fs::create_directories(fs::path(out_dir) / "features");

  SyntheticDataset data;
  data.oracle.spec = spec;
  {
    Rng proto_rng(mix_seed(spec.seed, 0x9e3779b9ULL));
    for (const SyntheticModalitySpec& m : spec.modalities) {
      data.oracle.neutral_prototypes.push_back(
          gaussian_vector(m.dim, proto_rng));
      std::vector<Vector> per_class;
      for (int c = 0; c < kNumClasses; ++c)
        per_class.push_back(gaussian_vector(m.dim, proto_rng));
      data.oracle.class_prototypes.push_back(std::move(per_class));
    }
  }

  struct SplitPlan {
    std::string name;
    int count;
    DatasetManifest* manifest;
  };
  std::array<SplitPlan, 3> plan{{{"train", counts.train, &data.train},
                                 {"val", counts.val, &data.val},
                                 {"test", counts.test, &data.test}}};
  struct VideoPlan {
    std::string id;
    std::string split;
    int label;
    std::uint64_t seed;
  };
  std::vector<VideoPlan> videos;
  std::uint64_t global = 0;
  for (const SplitPlan& s : plan) {
    s.manifest->split = s.name;
    s.manifest->base_dir = out_dir;
    for (const SyntheticModalitySpec& m : spec.modalities) {
      s.manifest->modality_names.push_back(m.name);
      s.manifest->modality_dims.push_back(m.dim);
    }
    for (int v = 0; v < s.count; ++v, ++global)
      videos.push_back({str(s.name, "_", v), s.name,
                        static_cast<int>(v % kNumClasses),
                        mix_seed(spec.seed, global)});
  }

  std::vector<GeneratedVideo> generated(videos.size());
  parallel_for(static_cast<Index>(videos.size()), workers, [&](Index i) {
    const VideoPlan& v = videos[i];
    generated[i] = generate_video(spec, v.id, v.split, v.label, v.seed);
    for (std::size_t mi = 0; mi < spec.modalities.size(); ++mi) {
      fs::path rel = fs::path("features") /
                     str(v.id, "_", spec.modalities[mi].name, ".tmff");
      write_feature_file((fs::path(out_dir) / rel).string(),
                         generated[i].features[mi]);
    }
  });

  for (std::size_t i = 0; i < videos.size(); ++i) {
    const VideoPlan& v = videos[i];
    DatasetManifest* manifest = nullptr;
    for (const SplitPlan& s : plan)
      if (s.name == v.split) manifest = s.manifest;
    ManifestEntry e;
    e.video_id = v.id;
    e.label = v.label;
    for (const SyntheticModalitySpec& m : spec.modalities)
      e.feature_paths.push_back(
          (fs::path("features") / str(v.id, "_", m.name, ".tmff")).string());
    manifest->entries.push_back(std::move(e));
    data.oracle.videos.push_back(generated[i].oracle);
  }

  write_manifest((fs::path(out_dir) / "train.manifest").string(), data.train);
  write_manifest((fs::path(out_dir) / "val.manifest").string(), data.val);
  write_manifest((fs::path(out_dir) / "test.manifest").string(), data.test);
  write_oracle((fs::path(out_dir) / "oracle.json").string(), data.oracle);
  return data;
}

// ---- oracle / spec serialization ---------------------------------------------------------------

namespace {

json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vector vector_from_json(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    v(static_cast<Index>(i)) = a[i].get<Scalar>();
  return v;
}

json spec_to_json(const SyntheticSpec& spec) {
  json j;
  j["version"] = 1;
  j["signal_fraction"] = spec.signal_fraction;
  j["noise"] = spec.noise;
  j["window_length"] = spec.window_length;
  j["seed"] = spec.seed;
  j["modalities"] = json::array();
  for (const SyntheticModalitySpec& m : spec.modalities) {
    json jm;
    jm["name"] = m.name;
    jm["dim"] = m.dim;
    jm["informative_classes"] = m.informative_classes;
    jm["is_sequence"] = m.is_sequence;
    jm["min_windows"] = m.min_windows;
    jm["max_windows"] = m.max_windows;
    j["modalities"].push_back(jm);
  }
  return j;
}

SyntheticSpec spec_from_json(const json& j, const std::string& where) {
  try {
    if (j.value("version", 0) != 1)
      throw ConfigError(str(where, ": unsupported spec version"));
    SyntheticSpec spec;
    spec.signal_fraction = j.value("signal_fraction", spec.signal_fraction);
    spec.noise = j.value("noise", spec.noise);
    spec.window_length = j.value("window_length", spec.window_length);
    spec.seed = j.value("seed", spec.seed);
    for (const json& jm : j.at("modalities")) {
      SyntheticModalitySpec m;
      m.name = jm.at("name").get<std::string>();
      m.dim = jm.at("dim").get<Index>();
      m.informative_classes =
          jm.value("informative_classes", std::vector<int>{});
      m.is_sequence = jm.value("is_sequence", true);
      m.min_windows = jm.value("min_windows", m.min_windows);
      m.max_windows = jm.value("max_windows", m.max_windows);
      spec.modalities.push_back(std::move(m));
    }
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(str(where, ": ", e.what()));
  }
}

}  // namespace

void write_oracle(const std::string& path, const OracleRecord& record) {
  json j;
  j["version"] = 1;
  j["spec"] = spec_to_json(record.spec);
  j["neutral_prototypes"] = json::array();
  for (const Vector& v : record.neutral_prototypes)
    j["neutral_prototypes"].push_back(vector_to_json(v));
  j["class_prototypes"] = json::array();
  for (const auto& per_class : record.class_prototypes) {
    json jm = json::array();
    for (const Vector& v : per_class) jm.push_back(vector_to_json(v));
    j["class_prototypes"].push_back(jm);
  }
  j["videos"] = json::array();
  for (const OracleVideo& v : record.videos) {
    json jv;
    jv["id"] = v.id;
    jv["split"] = v.split;
    jv["label"] = v.label;
    jv["signal_windows"] = v.signal_windows;
    j["videos"].push_back(jv);
  }
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os << j.dump(2) << "\n";
}

OracleRecord read_oracle(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open '", path, "'"));
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError(str("'", path, "': ", e.what()));
  }
  try {
    OracleRecord record;
    record.spec = spec_from_json(j.at("spec"), path);
    for (const json& v : j.at("neutral_prototypes"))
      record.neutral_prototypes.push_back(vector_from_json(v));
    for (const json& jm : j.at("class_prototypes")) {
      std::vector<Vector> per_class;
      for (const json& v : jm) per_class.push_back(vector_from_json(v));
      record.class_prototypes.push_back(std::move(per_class));
    }
    for (const json& jv : j.at("videos")) {
      OracleVideo v;
      v.id = jv.at("id").get<std::string>();
      v.split = jv.at("split").get<std::string>();
      v.label = jv.at("label").get<int>();
      v.signal_windows =
          jv.at("signal_windows").get<std::vector<std::vector<Index>>>();
      record.videos.push_back(std::move(v));
    }
    return record;
  } catch (const json::exception& e) {
    throw FormatError(str("'", path, "': ", e.what()));
  }
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open '", path, "'"));
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError(str("'", path, "': ", e.what()));
  }
  return spec_from_json(j, path);
}

void write_synthetic_spec(const std::string& path, const SyntheticSpec& spec) {
  std::ofstream os(path);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os << spec_to_json(spec).dump(2) << "\n";
}

// ---- likelihood oracle --------------------------------------------------------------------------

Scalar bayes_accuracy(const OracleRecord& oracle, const DatasetManifest& split,
                      const std::vector<Index>& modality_subset) {
  if (split.entries.empty())
    throw ContractError("bayes_accuracy: empty split");
  std::vector<Index> use = modality_subset;
  if (use.empty()) {
    use.resize(split.modality_names.size());
    std::iota(use.begin(), use.end(), 0);
  }
  // Map manifest modalities onto oracle/spec modality indices by name.
  std::vector<std::size_t> spec_index(use.size());
  for (std::size_t k = 0; k < use.size(); ++k) {
    const std::string& name = split.modality_names[use[k]];
    bool found = false;
    for (std::size_t mi = 0; mi < oracle.spec.modalities.size(); ++mi)
      if (oracle.spec.modalities[mi].name == name) {
        spec_index[k] = mi;
        found = true;
      }
    if (!found)
      throw ContractError(str("bayes_accuracy: oracle knows no modality '",
                              name, "'"));
  }

  int correct = 0;
  for (std::size_t e = 0; e < split.entries.size(); ++e) {
    const OracleVideo& known = oracle.video(split.entries[e].video_id);
    std::array<Scalar, kNumClasses> score{};
    for (std::size_t k = 0; k < use.size(); ++k) {
      std::size_t mi = spec_index[k];
      const SyntheticModalitySpec& m = oracle.spec.modalities[mi];
      Matrix x = read_feature_file(split.feature_path(e, use[k])).values;
      const std::vector<Index>& signal = known.signal_windows[mi];
      for (int c = 0; c < kNumClasses; ++c) {
        bool informative = informative_for(m, c);
        Scalar sq = 0.0;
        if (!m.is_sequence) {
          const Vector& base =
              informative ? oracle.class_prototypes[mi][c]
                          : oracle.neutral_prototypes[mi];
          sq += (x.row(0).transpose() - base).squaredNorm();
        } else {
          Index windows = x.rows() / oracle.spec.window_length;
          for (Index w = 0; w < windows; ++w) {
            bool in_signal =
                std::binary_search(signal.begin(), signal.end(), w);
            const Vector& base = (in_signal && informative)
                                     ? oracle.class_prototypes[mi][c]
                                     : oracle.neutral_prototypes[mi];
            for (Index f = w * oracle.spec.window_length;
                 f < (w + 1) * oracle.spec.window_length; ++f)
              sq += (x.row(f).transpose() - base).squaredNorm();
          }
        }
        // Gaussian log likelihood up to class-independent constants; at
        // noise 0 the squared distance itself is the (negated) score.
        Scalar sigma2 = oracle.spec.noise * oracle.spec.noise;
        score[c] += sigma2 > 0.0 ? -sq / (2.0 * sigma2) : -sq;
      }
    }
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (score[c] > score[best]) best = c;
    if (best == split.entries[e].label) ++correct;
  }
  return Scalar(correct) / Scalar(split.entries.size());
}

}  // namespace tmf
