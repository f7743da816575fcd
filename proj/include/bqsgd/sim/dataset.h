// Copyright 2026 The BQ-SGD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef BQSGD_SIM_DATASET_H_
#define BQSGD_SIM_DATASET_H_

#include <cstdint>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "absl/types/span.h"

namespace bqsgd::sim {

// Dense row-major samples with integer labels.
struct Dataset {
  int64_t feature_dim = 0;
  std::vector<double> features;
  std::vector<int32_t> labels;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  absl::Span<const double> Row(int64_t i) const {
    return absl::MakeConstSpan(features).subspan(i * feature_dim, feature_dim);
  }
};

// Shuffles sample indices under `seed` and deals them out round-robin, so
// sizes differ by at most one. InvalidArgument when num_clients exceeds
// num_samples.
absl::StatusOr<std::vector<std::vector<int64_t>>> PartitionData(
    int64_t num_samples, int64_t num_clients, uint64_t seed);

// IDX parsing. Images must be unsigned-byte with three dimensions, labels
// unsigned-byte with one. Malformed input is DataLoss.
absl::StatusOr<Dataset> ParseIdx(absl::Span<const uint8_t> images,
                                 absl::Span<const uint8_t> labels);

// Reads an IDX image file and its label file. Pixels are scaled to [0, 1].
absl::StatusOr<Dataset> LoadIdxDataset(const std::string& images_path,
                                       const std::string& labels_path);

}  // namespace bqsgd::sim

#endif  // BQSGD_SIM_DATASET_H_
