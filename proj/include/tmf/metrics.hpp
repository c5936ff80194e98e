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
#include <vector>

#include "tmf/temporal.hpp"
#include "tmf/types.hpp"

namespace tmf {

// Accuracy plus a confusion matrix with rows = true classes and
// columns = predicted classes.
struct MetricsReport {
  Scalar accuracy = 0.0;
  Matrix confusion;  // counts, kNumClasses x kNumClasses
  Vector per_class_recall;
  int total = 0;

  static MetricsReport from_predictions(const std::vector<int>& labels,
                                        const std::vector<int>& predictions);

  // trace/total must equal accuracy and row sums the per-class support.
  void check_consistency() const;

  std::string to_text() const;
  // Header row of predicted-class names, then one row per true class.
  void write_confusion_csv(const std::string& path) const;
};

}  // namespace tmf
