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

#include "tmf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tmf/errors.hpp"

namespace tmf {

namespace {

constexpr char kMagic[] = "TMF1";

std::uint64_t byteswap64(std::uint64_t v) {
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
  return r;
}

void write_f64_le(std::ostream& os, Scalar v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  if constexpr (std::endian::native == std::endian::big)
    bits = byteswap64(bits);
  os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
}

Scalar read_f64_le(std::istream& is) {
  std::uint64_t bits;
  is.read(reinterpret_cast<char*>(&bits), sizeof(bits));
  if constexpr (std::endian::native == std::endian::big)
    bits = byteswap64(bits);
  Scalar v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

bool plain_token(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c == '\n' || c == '\r') return false;
  return s.find(' ') == std::string::npos;
}

}  // namespace

const CheckpointBlock& ModelRecord::block(const std::string& block_name) const {
  for (const CheckpointBlock& b : blocks)
    if (b.name == block_name) return b;
  throw FormatError(str("checkpoint: model '", name, "' has no block '",
                        block_name, "'"));
}

const std::string& ModelRecord::hparam(const std::string& key) const {
  auto it = hparams.find(key);
  if (it == hparams.end())
    throw FormatError(str("checkpoint: model '", name, "' has no hparam '",
                          key, "'"));
  return it->second;
}

void write_checkpoint(const std::string& path,
                      std::span<const ModelRecord> models) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os << kMagic << "\n";
  for (const ModelRecord& m : models) {
    if (!plain_token(m.name) || !plain_token(m.kind))
      throw ContractError(str("checkpoint: model name/kind must be single ",
                              "tokens, got '", m.name, "'/'", m.kind, "'"));
    os << "model " << m.name << " " << m.kind << "\n";
    for (const auto& [k, v] : m.hparams) {
      if (!plain_token(k) || v.find('\n') != std::string::npos)
        throw ContractError(str("checkpoint: bad hparam '", k, "'"));
      os << "hparam " << k << " " << v << "\n";
    }
    for (const CheckpointBlock& b : m.blocks) {
      if (!plain_token(b.name))
        throw ContractError(str("checkpoint: bad block name '", b.name, "'"));
      os << "block " << b.name << " " << b.value.rows() << " "
         << b.value.cols() << "\n";
    }
  }
  os << "end\n";
  for (const ModelRecord& m : models)
    for (const CheckpointBlock& b : m.blocks)
      for (Index i = 0; i < b.value.rows(); ++i)
        for (Index j = 0; j < b.value.cols(); ++j)
          write_f64_le(os, b.value(i, j));
  if (!os) throw IoError(str("write to '", path, "' failed"));
}

std::vector<ModelRecord> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str("cannot open '", path, "'"));
  std::string line;
  if (!std::getline(is, line) || line != kMagic)
    throw FormatError(str("'", path, "' is not a TMF1 checkpoint"));
  std::vector<ModelRecord> models;
  while (std::getline(is, line)) {
    if (line == "end") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "model") {
      ModelRecord m;
      ls >> m.name >> m.kind;
      if (m.name.empty() || m.kind.empty())
        throw FormatError(str("checkpoint '", path, "': bad model line: ",
                              line));
      models.push_back(std::move(m));
    } else if (tag == "hparam") {
      if (models.empty())
        throw FormatError(str("checkpoint '", path, "': hparam before model"));
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      models.back().hparams[key] = value;
    } else if (tag == "block") {
      if (models.empty())
        throw FormatError(str("checkpoint '", path, "': block before model"));
      CheckpointBlock b;
      Index rows = -1, cols = -1;
      ls >> b.name >> rows >> cols;
      if (b.name.empty() || rows < 0 || cols < 0)
        throw FormatError(str("checkpoint '", path, "': bad block line: ",
                              line));
      b.value.resize(rows, cols);
      models.back().blocks.push_back(std::move(b));
    } else {
      throw FormatError(str("checkpoint '", path, "': unknown tag '", tag,
                            "'"));
    }
  }
  if (line != "end")
    throw FormatError(str("checkpoint '", path, "': missing end marker"));
  for (ModelRecord& m : models)
    for (CheckpointBlock& b : m.blocks)
      for (Index i = 0; i < b.value.rows(); ++i)
        for (Index j = 0; j < b.value.cols(); ++j) {
          b.value(i, j) = read_f64_le(is);
          if (!is)
            throw FormatError(str("checkpoint '", path,
                                  "': truncated parameter payload in '",
                                  m.name, "/", b.name, "'"));
        }
  return models;
}

}  // namespace tmf
