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

#include "bqsgd/codec.h"

#include <algorithm>
#include <cmath>

#include "absl/strings/str_format.h"

namespace bqsgd::codec {
namespace {

absl::Status CheckFinite(absl::Span<const double> values) {
  for (size_t j = 0; j < values.size(); ++j) {
    if (!std::isfinite(values[j])) {
      return absl::InvalidArgumentError(
          absl::StrFormat("non-finite gradient coordinate at index %d", j));
    }
  }
  return absl::OkStatus();
}

// Rounding draw for one coordinate. Consumes exactly one value from rng.
int64_t RoundLevel(double magnitude, const BqConfig& config, CounterRng& rng) {
  const double scaled = static_cast<double>(config.quant_level) * magnitude /
                        config.clip_bound;
  const double u = rng.Uniform();
  const double floor_level = std::floor(scaled);
  if (floor_level >= static_cast<double>(config.quant_level)) {
    return config.quant_level;
  }
  const double p = scaled - floor_level;
  // p == 0 on a bin edge: u < 0 never holds, so the lower level is kept.
  return static_cast<int64_t>(floor_level) + (u < p ? 1 : 0);
}

absl::Status CheckClipped(absl::Span<const double> clipped,
                          const BqConfig& config) {
  for (size_t j = 0; j < clipped.size(); ++j) {
    if (!std::isfinite(clipped[j]) ||
        std::abs(clipped[j]) > config.clip_bound) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "coordinate %d = %g exceeds clip bound %g", j, clipped[j],
          config.clip_bound));
    }
  }
  return absl::OkStatus();
}

}  // namespace

absl::Status BqConfig::Validate() const {
  if (!(clip_bound > 0.0) || !std::isfinite(clip_bound)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("clip bound must be positive, got %g", clip_bound));
  }
  if (quant_level < 1) {
    return absl::InvalidArgumentError(
        absl::StrFormat("quantization level must be >= 1, got %d",
                        quant_level));
  }
  if (noise_trials < 0) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "noise trials must be >= 0, got %d", noise_trials));
  }
  if (noise_prob.numerator == 0 ||
      noise_prob.numerator >= noise_prob.denominator) {
    return absl::InvalidArgumentError(
        absl::StrFormat("noise probability must lie in (0, 1), got %d/%d",
                        noise_prob.numerator, noise_prob.denominator));
  }
  return absl::OkStatus();
}

std::vector<int64_t> SignedLevels::Combined() const {
  std::vector<int64_t> out(levels.size());
  for (size_t j = 0; j < levels.size(); ++j) out[j] = signs[j] * levels[j];
  return out;
}

absl::StatusOr<GradientVector> ClipPerSample(absl::Span<const double> grad,
                                             double clip_bound) {
  if (!(clip_bound > 0.0)) {
    return absl::InvalidArgumentError("clip bound must be positive");
  }
  if (absl::Status s = CheckFinite(grad); !s.ok()) return s;
  double norm_inf = 0.0;
  for (double v : grad) norm_inf = std::max(norm_inf, std::abs(v));
  const double scale = std::max(1.0, norm_inf / clip_bound);
  GradientVector out(grad.begin(), grad.end());
  if (scale > 1.0) {
    for (double& v : out) {
      v = std::clamp(v / scale, -clip_bound, clip_bound);
    }
  }
  return out;
}

absl::StatusOr<GradientVector> ClipBatchAverage(
    absl::Span<const GradientVector> per_sample_grads, double clip_bound) {
  if (per_sample_grads.empty()) {
    return absl::InvalidArgumentError("empty batch");
  }
  const size_t dim = per_sample_grads.front().size();
  GradientVector sum(dim, 0.0);
  for (const GradientVector& grad : per_sample_grads) {
    if (grad.size() != dim) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "dimension mismatch in batch: %d vs %d", grad.size(), dim));
    }
    absl::StatusOr<GradientVector> clipped = ClipPerSample(grad, clip_bound);
    if (!clipped.ok()) return clipped.status();
    for (size_t j = 0; j < dim; ++j) sum[j] += (*clipped)[j];
  }
  const double inv = 1.0 / static_cast<double>(per_sample_grads.size());
  // Rounding in the sum can overshoot C by an ulp.
  for (double& v : sum) v = std::clamp(v * inv, -clip_bound, clip_bound);
  return sum;
}

absl::StatusOr<SignedLevels> UniformQuantize(absl::Span<const double> clipped,
                                             const BqConfig& config,
                                             const StreamKey& key) {
  if (absl::Status s = config.Validate(); !s.ok()) return s;
  if (absl::Status s = CheckClipped(clipped, config); !s.ok()) return s;
  SignedLevels out;
  out.signs.resize(clipped.size());
  out.levels.resize(clipped.size());
  for (size_t j = 0; j < clipped.size(); ++j) {
    CounterRng rng(key.WithIndex(j));
    out.signs[j] = clipped[j] < 0.0 ? -1 : 1;
    out.levels[j] = RoundLevel(std::abs(clipped[j]), config, rng);
  }
  return out;
}

absl::StatusOr<QuantizedMessage> AddBinomialNoise(
    absl::Span<const int64_t> signed_levels, const BqConfig& config,
    const StreamKey& key) {
  if (absl::Status s = config.Validate(); !s.ok()) return s;
  for (int64_t level : signed_levels) {
    if (level < -config.quant_level || level > config.quant_level) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "signed level %d outside [-%d, %d]", level, config.quant_level,
          config.quant_level));
    }
  }
  BinomialSampler sampler(config.noise_trials, config.noise_prob.value());
  QuantizedMessage msg{config, {}};
  msg.codes.resize(signed_levels.size());
  for (size_t j = 0; j < signed_levels.size(); ++j) {
    CounterRng rng(key.WithIndex(j));
    rng();  // draw 0 belongs to rounding
    msg.codes[j] = signed_levels[j] + sampler.Sample(rng);
  }
  return msg;
}

absl::StatusOr<GradientVector> Decode(const QuantizedMessage& msg) {
  const BqConfig& config = msg.config;
  if (absl::Status s = config.Validate(); !s.ok()) {
    return absl::DataLossError(
        absl::StrCat("corrupt message config: ", s.message()));
  }
  const double step =
      config.clip_bound / static_cast<double>(config.quant_level);
  const double offset = config.noise_offset();
  GradientVector out(msg.codes.size());
  for (size_t j = 0; j < msg.codes.size(); ++j) {
    const int64_t code = msg.codes[j];
    if (code < config.min_code() || code > config.max_code()) {
      return absl::DataLossError(absl::StrFormat(
          "code %d at index %d outside alphabet [%d, %d]", code, j,
          config.min_code(), config.max_code()));
    }
    out[j] = step * (static_cast<double>(code) - offset);
  }
  return out;
}

double NoiseVariance(const BqConfig& config) {
  const double s = static_cast<double>(config.quant_level);
  const double q = config.noise_prob.value();
  return (static_cast<double>(config.noise_trials) * q * (1.0 - q) +
          1.0 / 6.0) /
         (s * s);
}

NoiseStats NoisePdf(const BqConfig& config) {
  const int64_t m = config.noise_trials;
  const double s = static_cast<double>(config.quant_level);
  const double c = config.clip_bound;
  const double mq = config.noise_offset();
  const std::vector<double> pmf = BinomialPmf(m, config.noise_prob.value());
  auto mass = [&](int64_t k) {
    return (k < 0 || k > m) ? 0.0 : pmf[static_cast<size_t>(k)];
  };

  NoiseStats stats;
  stats.variance_per_coord = c * c * NoiseVariance(config);
  stats.pieces.reserve(static_cast<size_t>(m) + 2);
  for (int64_t k = -1; k <= m; ++k) {
    const double kd = static_cast<double>(k);
    const double p_k = mass(k);
    const double p_next = mass(k + 1);
    stats.pieces.push_back(PdfPiece{
        .lower = (kd - mq) * c / s,
        .upper = (kd + 1.0 - mq) * c / s,
        .intercept = (s / c) * ((kd + 1.0 - mq) * p_k + (mq - kd) * p_next),
        .slope = (s * s) / (c * c) * (p_next - p_k),
    });
  }
  return stats;
}

double NoiseStats::Density(double r) const {
  if (pieces.empty() || r < support_lower() || r > support_upper()) return 0.0;
  auto it = std::upper_bound(
      pieces.begin(), pieces.end(), r,
      [](double value, const PdfPiece& p) { return value < p.upper; });
  if (it == pieces.end()) it = std::prev(pieces.end());
  return std::max(0.0, it->intercept + it->slope * r);
}

double NoiseStats::IntervalMass(double a, double b) const {
  if (b < a) std::swap(a, b);
  double total = 0.0;
  for (const PdfPiece& p : pieces) {
    const double lo = std::max(a, p.lower);
    const double hi = std::min(b, p.upper);
    if (hi <= lo) continue;
    total += p.intercept * (hi - lo) + 0.5 * p.slope * (hi * hi - lo * lo);
  }
  return total;
}

absl::StatusOr<Encoder> Encoder::Create(const BqConfig& config) {
  if (absl::Status s = config.Validate(); !s.ok()) return s;
  return Encoder(config);
}

Encoder::Encoder(const BqConfig& config)
    : config_(config),
      sampler_(config.noise_trials, config.noise_prob.value()) {}

absl::StatusOr<QuantizedMessage> Encoder::Encode(
    absl::Span<const double> clipped, const StreamKey& key) const {
  if (absl::Status s = CheckClipped(clipped, config_); !s.ok()) return s;
  QuantizedMessage msg{config_, {}};
  msg.codes.resize(clipped.size());
  for (size_t j = 0; j < clipped.size(); ++j) {
    CounterRng rng(key.WithIndex(j));
    const int64_t level = RoundLevel(std::abs(clipped[j]), config_, rng);
    const int64_t signed_level = clipped[j] < 0.0 ? -level : level;
    msg.codes[j] = signed_level + sampler_.Sample(rng);
  }
  return msg;
}

}  // namespace bqsgd::codec
