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


#include "bqsgd/sim/dataset.h"

#include <fstream>
#include <iterator>
#include <numeric>
#include <utility>

#include "absl/status/status.h"
#include "absl/strings/str_format.h"
#include "bqsgd/random.h"

namespace bqsgd::sim {
namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

uint32_t ReadBigEndian32(absl::Span<const uint8_t> bytes, size_t offset) {
  return (uint32_t{bytes[offset]} << 24) | (uint32_t{bytes[offset + 1]} << 16) |
         (uint32_t{bytes[offset + 2]} << 8) | uint32_t{bytes[offset + 3]};
}

absl::StatusOr<std::vector<uint8_t>> ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrFormat("cannot open %s", path));
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

}  // namespace

absl::StatusOr<std::vector<std::vector<int64_t>>> PartitionData(
    int64_t num_samples, int64_t num_clients, uint64_t seed) {
  if (num_clients < 1) {
    return absl::InvalidArgumentError("need at least one client");
  }
  if (num_clients > num_samples) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "%d clients exceed %d samples", num_clients, num_samples));
  }
  std::vector<int64_t> order(num_samples);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(StreamKey{.seed = seed, .index = kPartitionStream});
  for (int64_t i = num_samples - 1; i > 0; --i) {
    std::swap(order[i], order[rng.UniformInt(i + 1)]);
  }
  std::vector<std::vector<int64_t>> parts(num_clients);
  for (int64_t i = 0; i < num_samples; ++i) {
    parts[i % num_clients].push_back(order[i]);
  }
  return parts;
}

absl::StatusOr<Dataset> ParseIdx(absl::Span<const uint8_t> images,
                                 absl::Span<const uint8_t> labels) {
  if (images.size() < 16 || ReadBigEndian32(images, 0) != kIdxImagesMagic) {
    return absl::DataLossError("image file is not a 3-d unsigned-byte IDX file");
  }
  if (labels.size() < 8 || ReadBigEndian32(labels, 0) != kIdxLabelsMagic) {
    return absl::DataLossError("label file is not a 1-d unsigned-byte IDX file");
  }
  const uint64_t count = ReadBigEndian32(images, 4);
  const uint64_t rows = ReadBigEndian32(images, 8);
  const uint64_t cols = ReadBigEndian32(images, 12);
  const uint64_t label_count = ReadBigEndian32(labels, 4);
  if (rows == 0 || cols == 0) {
    return absl::DataLossError("image dimensions must be positive");
  }
  if (images.size() != 16 + count * rows * cols) {
    return absl::DataLossError(absl::StrFormat(
        "image payload has %d bytes, header promises %d", images.size() - 16,
        count * rows * cols));
  }
  if (labels.size() != 8 + label_count) {
    return absl::DataLossError("label payload size does not match header");
  }
  if (label_count != count) {
    return absl::DataLossError(absl::StrFormat(
        "%d labels for %d images", label_count, count));
  }
  Dataset data;
  data.feature_dim = static_cast<int64_t>(rows * cols);
  data.features.reserve(count * rows * cols);
  for (size_t i = 16; i < images.size(); ++i) {
    data.features.push_back(images[i] / 255.0);
  }
  data.labels.assign(labels.begin() + 8, labels.end());
  return data;
}

absl::StatusOr<Dataset> LoadIdxDataset(const std::string& images_path,
                                       const std::string& labels_path) {
  absl::StatusOr<std::vector<uint8_t>> images = ReadFile(images_path);
  if (!images.ok()) return images.status();
  absl::StatusOr<std::vector<uint8_t>> labels = ReadFile(labels_path);
  if (!labels.ok()) return labels.status();
  return ParseIdx(*images, *labels);
}

}  // namespace bqsgd::sim
