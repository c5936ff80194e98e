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

#include "tmf/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tmf/data.hpp"

namespace tmf {

MetricsReport MetricsReport::from_predictions(
    const std::vector<int>& labels, const std::vector<int>& predictions) {
  if (labels.size() != predictions.size())
    throw DimensionError(str("metrics: ", labels.size(), " labels vs ",
                             predictions.size(), " predictions"));
  MetricsReport r;
  r.confusion = Matrix::Zero(kNumClasses, kNumClasses);
  r.total = static_cast<int>(labels.size());
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses)
      throw IndexError(str("metrics: label ", labels[i], " out of range"));
    if (predictions[i] < 0 || predictions[i] >= kNumClasses)
      throw IndexError(str("metrics: prediction ", predictions[i],
                           " out of range"));
    r.confusion(labels[i], predictions[i]) += 1.0;
    if (labels[i] == predictions[i]) ++correct;
  }
  r.accuracy = r.total > 0 ? Scalar(correct) / Scalar(r.total) : 0.0;
  r.per_class_recall = Vector::Zero(kNumClasses);
  for (Index c = 0; c < kNumClasses; ++c) {
    Scalar support = r.confusion.row(c).sum();
    if (support > 0.0) r.per_class_recall(c) = r.confusion(c, c) / support;
  }
  r.check_consistency();
  return r;
}

void MetricsReport::check_consistency() const {
  if (total > 0 &&
      std::abs(confusion.trace() / Scalar(total) - accuracy) > 1e-12)
    throw ContractError(
        str("metrics: trace/total = ", confusion.trace() / Scalar(total),
            " disagrees with accuracy ", accuracy));
  if (std::llround(confusion.sum()) != total)
    throw ContractError(str("metrics: confusion sums to ", confusion.sum(),
                            " for ", total, " samples"));
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "accuracy " << accuracy << " (" << std::llround(accuracy * total)
     << "/" << total << ")\n";
  os << "confusion (rows = true, columns = predicted):\n";
  os << std::setprecision(0);
  for (Index r = 0; r < kNumClasses; ++r) {
    os << std::setw(9) << emotion_name(static_cast<int>(r));
    for (Index c = 0; c < kNumClasses; ++c)
      os << std::setw(6) << confusion(r, c);
    os << std::setprecision(3) << "   recall " << per_class_recall(r)
       << std::setprecision(0) << "\n";
  }
  return os.str();
}

void MetricsReport::write_confusion_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError(str("cannot open '", path, "' for writing"));
  os << "true\\predicted";
  for (int c = 0; c < kNumClasses; ++c) os << "," << emotion_name(c);
  os << "\n";
  for (Index r = 0; r < kNumClasses; ++r) {
    os << emotion_name(static_cast<int>(r));
    for (Index c = 0; c < kNumClasses; ++c)
      os << "," << std::llround(confusion(r, c));
    os << "\n";
  }
  if (!os) throw IoError(str("write to '", path, "' failed"));
}

}  // namespace tmf
