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

#ifndef BQSGD_RANDOM_H_
#define BQSGD_RANDOM_H_

#include <cstdint>
#include <limits>

namespace bqsgd {

// Identifies one independent random stream. Every stochastic choice in the
// library draws from a stream addressed by (seed, client, round, index), so
// results never depend on evaluation order or thread scheduling.
struct StreamKey {
  uint64_t seed = 0;
  uint64_t client = 0;
  uint64_t round = 0;
  // Coordinate index for codec draws; other uses pick a tagged index.
  uint64_t index = 0;

  StreamKey WithIndex(uint64_t new_index) const {
    StreamKey key = *this;
    key.index = new_index;
    return key;
  }
};

// Reserved stream indices that cannot collide with coordinate indices.
inline constexpr uint64_t kBatchSamplingStream = 0xB47C'0000'0000'0001ULL;
inline constexpr uint64_t kPartitionStream = 0xB47C'0000'0000'0002ULL;
inline constexpr uint64_t kDatasetStream = 0xB47C'0000'0000'0003ULL;

// SplitMix64 over a hashed stream key. Cheap to construct, so one instance per
// coordinate is affordable. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = uint64_t;

  explicit CounterRng(const StreamKey& key);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return Mix(state_);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double Uniform() {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound) by rejection; bound must be positive.
  uint64_t UniformInt(uint64_t bound);

  static uint64_t Mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  uint64_t state_;
};

}  // namespace bqsgd

#endif  // BQSGD_RANDOM_H_
