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

#include "bqsgd/wire.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>

#include "absl/strings/str_format.h"

namespace bqsgd::wire {
namespace {

constexpr uint64_t kMaxU32 = std::numeric_limits<uint32_t>::max();

void PutLe(std::vector<uint8_t>& out, uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) {
    out.push_back(static_cast<uint8_t>(value >> (8 * i)));
  }
}

uint64_t GetLe(absl::Span<const uint8_t> in, size_t offset, int bytes) {
  uint64_t value = 0;
  for (int i = 0; i < bytes; ++i) {
    value |= static_cast<uint64_t>(in[offset + i]) << (8 * i);
  }
  return value;
}

size_t PayloadBytes(uint64_t dimension, int64_t width) {
  return static_cast<size_t>((dimension * static_cast<uint64_t>(width) + 7) /
                             8);
}

}  // namespace

int64_t CodeWidth(int64_t quant_level, int64_t noise_trials) {
  const uint64_t alphabet =
      static_cast<uint64_t>(2 * quant_level + noise_trials + 1);
  return std::bit_width(alphabet - 1);
}

int64_t FrameCostBits(int64_t dimension, int64_t quant_level,
                      int64_t noise_trials) {
  return dimension * CodeWidth(quant_level, noise_trials);
}

size_t FrameSizeBytes(int64_t dimension, int64_t quant_level,
                      int64_t noise_trials) {
  return kHeaderSize + PayloadBytes(static_cast<uint64_t>(dimension),
                                    CodeWidth(quant_level, noise_trials));
}

absl::StatusOr<std::vector<uint8_t>> EncodeFrame(
    const codec::QuantizedMessage& msg, uint64_t round, uint32_t client_id) {
  const codec::BqConfig& config = msg.config;
  if (absl::Status s = config.Validate(); !s.ok()) return s;
  if (static_cast<uint64_t>(config.quant_level) > kMaxU32 ||
      static_cast<uint64_t>(config.noise_trials) > kMaxU32 ||
      msg.codes.size() > kMaxU32) {
    return absl::InvalidArgumentError(
        "s, m and d must each fit in 32 unsigned bits");
  }
  const int64_t width = CodeWidth(config.quant_level, config.noise_trials);

  std::vector<uint8_t> out;
  out.reserve(kHeaderSize + PayloadBytes(msg.codes.size(), width));
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(kVersion);
  PutLe(out, msg.codes.size(), 4);
  PutLe(out, static_cast<uint64_t>(config.quant_level), 4);
  PutLe(out, static_cast<uint64_t>(config.noise_trials), 4);
  PutLe(out, config.noise_prob.numerator, 4);
  PutLe(out, config.noise_prob.denominator, 4);
  PutLe(out, std::bit_cast<uint64_t>(config.clip_bound), 8);
  PutLe(out, round, 8);
  PutLe(out, client_id, 4);

  uint64_t acc = 0;
  int pending = 0;
  for (size_t j = 0; j < msg.codes.size(); ++j) {
    const int64_t code = msg.codes[j];
    if (code < config.min_code() || code > config.max_code()) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "code %d at index %d outside alphabet [%d, %d]", code, j,
          config.min_code(), config.max_code()));
    }
    acc |= static_cast<uint64_t>(code + config.quant_level) << pending;
    pending += static_cast<int>(width);
    while (pending >= 8) {
      out.push_back(static_cast<uint8_t>(acc));
      acc >>= 8;
      pending -= 8;
    }
  }
  if (pending > 0) out.push_back(static_cast<uint8_t>(acc));
  return out;
}

absl::StatusOr<Frame> DecodeFramePrefix(absl::Span<const uint8_t> bytes,
                                        size_t* consumed) {
  if (bytes.size() < kMagic.size() + 1) {
    return absl::DataLossError("truncated frame header");
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    return absl::UnimplementedError("unsupported format: bad magic");
  }
  if (bytes[4] != kVersion) {
    return absl::UnimplementedError(
        absl::StrFormat("unsupported frame version %d", bytes[4]));
  }
  if (bytes.size() < kHeaderSize) {
    return absl::DataLossError("truncated frame header");
  }

  Frame frame;
  const uint64_t dimension = GetLe(bytes, 5, 4);
  codec::BqConfig& config = frame.message.config;
  config.quant_level = static_cast<int64_t>(GetLe(bytes, 9, 4));
  config.noise_trials = static_cast<int64_t>(GetLe(bytes, 13, 4));
  config.noise_prob.numerator = static_cast<uint32_t>(GetLe(bytes, 17, 4));
  config.noise_prob.denominator = static_cast<uint32_t>(GetLe(bytes, 21, 4));
  config.clip_bound = std::bit_cast<double>(GetLe(bytes, 25, 8));
  frame.round = GetLe(bytes, 33, 8);
  frame.client_id = static_cast<uint32_t>(GetLe(bytes, 41, 4));
  if (absl::Status s = config.Validate(); !s.ok()) {
    return absl::DataLossError(
        absl::StrCat("corrupt frame header: ", s.message()));
  }

  const int64_t width = CodeWidth(config.quant_level, config.noise_trials);
  const size_t payload = PayloadBytes(dimension, width);
  if (bytes.size() - kHeaderSize < payload) {
    return absl::DataLossError(absl::StrFormat(
        "truncated payload: need %d bytes, have %d", payload,
        bytes.size() - kHeaderSize));
  }

  const uint64_t max_shifted =
      static_cast<uint64_t>(2 * config.quant_level + config.noise_trials);
  const uint64_t mask = (uint64_t{1} << width) - 1;
  frame.message.codes.resize(dimension);
  uint64_t acc = 0;
  int available = 0;
  size_t pos = kHeaderSize;
  for (uint64_t j = 0; j < dimension; ++j) {
    while (available < width) {
      acc |= static_cast<uint64_t>(bytes[pos++]) << available;
      available += 8;
    }
    const uint64_t shifted = acc & mask;
    acc >>= width;
    available -= static_cast<int>(width);
    if (shifted > max_shifted) {
      return absl::DataLossError(absl::StrFormat(
          "code at index %d outside alphabet (shifted value %d > %d)", j,
          shifted, max_shifted));
    }
    frame.message.codes[j] =
        static_cast<int64_t>(shifted) - config.quant_level;
  }
  if (acc != 0) {
    return absl::DataLossError("nonzero pad bits");
  }
  *consumed = kHeaderSize + payload;
  return frame;
}

absl::StatusOr<Frame> DecodeFrame(absl::Span<const uint8_t> bytes) {
  size_t consumed = 0;
  absl::StatusOr<Frame> frame = DecodeFramePrefix(bytes, &consumed);
  if (!frame.ok()) return frame.status();
  if (consumed != bytes.size()) {
    return absl::DataLossError(absl::StrFormat(
        "%d trailing bytes after frame", bytes.size() - consumed));
  }
  return frame;
}

absl::StatusOr<std::vector<Frame>> DecodeTrace(
    absl::Span<const uint8_t> bytes) {
  std::vector<Frame> frames;
  size_t offset = 0;
  while (offset < bytes.size()) {
    size_t consumed = 0;
    absl::StatusOr<Frame> frame =
        DecodeFramePrefix(bytes.subspan(offset), &consumed);
    if (!frame.ok()) {
      return absl::Status(frame.status().code(),
                          absl::StrFormat("frame %d at byte %d: %s",
                                          frames.size(), offset,
                                          frame.status().message()));
    }
    frames.push_back(*std::move(frame));
    offset += consumed;
  }
  return frames;
}

}  // namespace bqsgd::wire
