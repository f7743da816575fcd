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

// Frame layout (all multi-byte fields little-endian):
//
//   offset  size  field
//        0     4  magic "BQG1"
//        4     1  version (1)
//        5     4  d, number of coordinates
//        9     4  s
//       13     4  m
//       17     4  q numerator
//       21     4  q denominator
//       25     8  C, IEEE-754 binary64
//       33     8  round index
//       41     4  client id
//       45        payload: d codes of w = ceil(log2(2s+m+1)) bits each
//
// Each code is stored shifted by +s, i.e. as a value in [0, 2s+m], packed
// least-significant-bit first within each byte. The payload is
// ceil(d*w/8) bytes and the trailing pad bits are zero. A trace file is a
// plain concatenation of frames.

#ifndef BQSGD_WIRE_H_
#define BQSGD_WIRE_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "absl/status/statusor.h"
#include "absl/types/span.h"
#include "bqsgd/codec.h"

namespace bqsgd::wire {

inline constexpr std::array<uint8_t, 4> kMagic = {'B', 'Q', 'G', '1'};
inline constexpr uint8_t kVersion = 1;
inline constexpr size_t kHeaderSize = 45;

struct Frame {
  codec::QuantizedMessage message;
  uint64_t round = 0;
  uint32_t client_id = 0;

  friend bool operator==(const Frame&, const Frame&) = default;
};

// ceil(log2(2s + m + 1)).
int64_t CodeWidth(int64_t quant_level, int64_t noise_trials);

// Payload bits of one message, d * CodeWidth(s, m). Excludes the header.
int64_t FrameCostBits(int64_t dimension, int64_t quant_level,
                      int64_t noise_trials);

// Bytes of a whole frame, header included.
size_t FrameSizeBytes(int64_t dimension, int64_t quant_level,
                      int64_t noise_trials);

// Fails with InvalidArgument if a code lies outside the alphabet or a field
// does not fit its header slot.
absl::StatusOr<std::vector<uint8_t>> EncodeFrame(
    const codec::QuantizedMessage& msg, uint64_t round, uint32_t client_id);

// Decodes exactly one frame spanning all of bytes.
//   Unimplemented: bad magic or version.
//   DataLoss: truncated, trailing bytes, nonzero pad bits, code outside the
//             alphabet, or an invalid configuration.
absl::StatusOr<Frame> DecodeFrame(absl::Span<const uint8_t> bytes);

// Decodes the frame at the start of bytes and reports its length.
absl::StatusOr<Frame> DecodeFramePrefix(absl::Span<const uint8_t> bytes,
                                        size_t* consumed);

// Splits a concatenation of frames.
absl::StatusOr<std::vector<Frame>> DecodeTrace(absl::Span<const uint8_t> bytes);

}  // namespace bqsgd::wire

#endif  // BQSGD_WIRE_H_
