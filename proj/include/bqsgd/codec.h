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

// Binomial-noise aided quantization of gradients.
//
// A clipped gradient g with |g_j| <= C is mapped coordinate-wise to an
// integer code
//
//   code_j = sign(g_j) * level_j + o_j,   level_j in {0..s},  o_j ~ Bin(m, q)
//
// where level_j is an unbiased stochastic rounding of s|g_j|/C. Codes take
// values in {-s, ..., s+m}, an alphabet of 2s+m+1 symbols. The receiver
// recovers an unbiased estimate (C/s)(code_j - mq).
//
// Randomness: coordinate j of a message draws from the stream
// key.WithIndex(j). Draw 0 is the rounding draw; draws 1.. feed the binomial.

#ifndef BQSGD_CODEC_H_
#define BQSGD_CODEC_H_

#include <cstdint>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/types/span.h"
#include "bqsgd/binomial.h"
#include "bqsgd/random.h"

namespace bqsgd::codec {

using GradientVector = std::vector<double>;

// Binomial success probability, kept rational so that m*q is exact on the
// wire for q = 1/2.
struct NoiseProb {
  uint32_t numerator = 1;
  uint32_t denominator = 2;

  double value() const {
    return static_cast<double>(numerator) / static_cast<double>(denominator);
  }
  friend bool operator==(const NoiseProb&, const NoiseProb&) = default;
};

struct BqConfig {
  double clip_bound = 1.0;   // C
  int64_t quant_level = 1;   // s
  int64_t noise_trials = 0;  // m
  NoiseProb noise_prob;      // q

  // C > 0 and finite, s >= 1, m >= 0, 0 < q < 1.
  absl::Status Validate() const;

  int64_t alphabet_size() const { return 2 * quant_level + noise_trials + 1; }
  int64_t min_code() const { return -quant_level; }
  int64_t max_code() const { return quant_level + noise_trials; }
  // m*q, the mean of the added binomial noise.
  double noise_offset() const {
    return static_cast<double>(noise_trials) * noise_prob.value();
  }

  friend bool operator==(const BqConfig&, const BqConfig&) = default;
};

struct QuantizedMessage {
  BqConfig config;
  std::vector<int64_t> codes;

  size_t dimension() const { return codes.size(); }
  friend bool operator==(const QuantizedMessage&,
                         const QuantizedMessage&) = default;
};

// Output of the rounding step, before noise: sign(g_j) and level_j in 0..s.
struct SignedLevels {
  std::vector<int8_t> signs;
  std::vector<int64_t> levels;

  // sign * level per coordinate, each in {-s..s}.
  std::vector<int64_t> Combined() const;
};

// One linear piece intercept + slope * r of the noise density on
// [lower, upper].
struct PdfPiece {
  double lower;
  double upper;
  double intercept;
  double slope;
};

// Distribution of the end-to-end noise r = decode(encode(g)) - g under the
// assumption that |g_j|/C is uniform within each quantization bin.
struct NoiseStats {
  // C^2 * V(m, q, s).
  double variance_per_coord = 0.0;
  // m + 2 contiguous pieces ordered by position.
  std::vector<PdfPiece> pieces;

  double support_lower() const { return pieces.front().lower; }
  double support_upper() const { return pieces.back().upper; }

  double Density(double r) const;
  // Exact integral of the density over [a, b].
  double IntervalMass(double a, double b) const;
};

// Step 1: scales grad by 1 / max(1, ||grad||_inf / C).
absl::StatusOr<GradientVector> ClipPerSample(absl::Span<const double> grad,
                                             double clip_bound);

// Average of per-sample clipped gradients; the result also has
// ||.||_inf <= C.
absl::StatusOr<GradientVector> ClipBatchAverage(
    absl::Span<const GradientVector> per_sample_grads, double clip_bound);

// Step 2: unbiased stochastic rounding of |g_j|/C onto {0, 1/s, ..., 1}.
absl::StatusOr<SignedLevels> UniformQuantize(absl::Span<const double> clipped,
                                             const BqConfig& config,
                                             const StreamKey& key);

// Step 3: adds i.i.d. Bin(m, q) noise to signed levels.
absl::StatusOr<QuantizedMessage> AddBinomialNoise(
    absl::Span<const int64_t> signed_levels, const BqConfig& config,
    const StreamKey& key);

// Receiver side: (C/s) * (code - m q) per coordinate.
absl::StatusOr<GradientVector> Decode(const QuantizedMessage& msg);

// V(m, q, s) = m q (1-q) / s^2 + 1 / (6 s^2), normalized by C^2.
double NoiseVariance(const BqConfig& config);

// Piecewise-linear density of the end-to-end noise.
NoiseStats NoisePdf(const BqConfig& config);

// Steps 2 and 3 with a cached binomial sampler, for repeated use under one
// configuration.
class Encoder {
 public:
  // Fails if config is invalid.
  static absl::StatusOr<Encoder> Create(const BqConfig& config);

  absl::StatusOr<QuantizedMessage> Encode(absl::Span<const double> clipped,
                                          const StreamKey& key) const;

  const BqConfig& config() const { return config_; }

 private:
  explicit Encoder(const BqConfig& config);

  BqConfig config_;
  BinomialSampler sampler_;
};

}  // namespace bqsgd::codec

#endif  // BQSGD_CODEC_H_
