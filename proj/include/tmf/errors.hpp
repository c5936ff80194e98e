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

#include <sstream>
#include <stdexcept>
#include <string>

namespace tmf {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
struct DimensionError : Error {
  using Error::Error;
};

// Value outside the mathematical domain of an operation (e.g. log of a
// non-positive number).
struct DomainError : Error {
  using Error::Error;
};

// Out-of-range index (class label, window index, ...).
struct IndexError : Error {
  using Error::Error;
};

// Invalid user-supplied configuration.
struct ConfigError : Error {
  using Error::Error;
};

// A documented precondition of an API was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Malformed file content (bad magic, truncated payload, ...).
struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

namespace detail {

inline void str_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void str_append(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  str_append(os, rest...);
}

}  // namespace detail

// Small helper to build error messages without pulling in a formatting
// library: str("got ", rows, "x", cols).
template <typename... Args>
std::string str(const Args&... args) {
  std::ostringstream os;
  detail::str_append(os, args...);
  return os.str();
}

}  // namespace tmf
