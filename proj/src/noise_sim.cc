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


#include "bqsgd/noise_sim.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "absl/status/status.h"
#include "bqsgd/random.h"

namespace bqsgd::codec {

absl::StatusOr<NoiseSimulation> SimulateNoise(const BqConfig& config,
                                              int64_t samples, uint64_t seed,
                                              int bins_per_piece) {
  if (absl::Status s = config.Validate(); !s.ok()) return s;
  if (samples < 2 || bins_per_piece < 1) {
    return absl::InvalidArgumentError(
        "need at least two samples and one bin per piece");
  }
  absl::StatusOr<Encoder> encoder = Encoder::Create(config);
  if (!encoder.ok()) return encoder.status();
  const NoiseStats stats = NoisePdf(config);

  std::vector<double> edges;
  for (const PdfPiece& p : stats.pieces) {
    for (int k = 0; k < bins_per_piece; ++k) {
      edges.push_back(p.lower + (p.upper - p.lower) * k / bins_per_piece);
    }
  }
  edges.push_back(stats.support_upper());
  std::vector<int64_t> counts(edges.size() - 1, 0);

  constexpr int64_t kBlock = 1 << 14;
  const double c = config.clip_bound;
  CounterRng g_rng(StreamKey{.seed = seed, .index = kDatasetStream});
  std::vector<double> g;
  double sum = 0.0, sum_sq = 0.0;
  for (int64_t done = 0, block = 0; done < samples; done += kBlock, ++block) {
    g.resize(std::min(kBlock, samples - done));
    for (double& v : g) v = c * (2.0 * g_rng.Uniform() - 1.0);
    absl::StatusOr<QuantizedMessage> msg = encoder->Encode(
        g, StreamKey{.seed = seed, .round = static_cast<uint64_t>(block)});
    if (!msg.ok()) return msg.status();
    absl::StatusOr<GradientVector> decoded = Decode(*msg);
    if (!decoded.ok()) return decoded.status();
    for (size_t j = 0; j < g.size(); ++j) {
      const double r = (*decoded)[j] - g[j];
      sum += r;
      sum_sq += r * r;
      const auto it = std::upper_bound(edges.begin(), edges.end(), r);
      const size_t bin =
          std::clamp<size_t>(it - edges.begin(), 1, counts.size()) - 1;
      ++counts[bin];
    }
  }

  NoiseSimulation out;
  out.samples = samples;
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  out.sample_variance = (sum_sq - n * mean * mean) / (n - 1);
  out.predicted_variance = stats.variance_per_coord;
  for (size_t i = 0; i < counts.size(); ++i) {
    NoiseHistogramBin bin;
    bin.lower = edges[i];
    bin.upper = edges[i + 1];
    bin.expected_mass = stats.IntervalMass(bin.lower, bin.upper);
    bin.observed_mass = static_cast<double>(counts[i]) / n;
    bin.standard_error =
        std::sqrt(bin.expected_mass * (1.0 - bin.expected_mass) / n);
    double deviation;
    if (bin.standard_error > 0.0) {
      deviation =
          std::abs(bin.observed_mass - bin.expected_mass) / bin.standard_error;
    } else {
      deviation = counts[i] == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    out.max_deviation_in_se = std::max(out.max_deviation_in_se, deviation);
    out.bins.push_back(bin);
  }
  return out;
}

}  // namespace bqsgd::codec
