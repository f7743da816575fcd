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


#ifndef BQSGD_NOISE_SIM_H_
#define BQSGD_NOISE_SIM_H_

#include <cstdint>
#include <vector>

#include "absl/status/statusor.h"
#include "bqsgd/codec.h"

namespace bqsgd::codec {

struct NoiseHistogramBin {
  double lower;
  double upper;
  double expected_mass;  // integral of the density over the bin
  double observed_mass;
  // Binomial standard error of observed_mass under expected_mass.
  double standard_error;
};

struct NoiseSimulation {
  int64_t samples = 0;
  std::vector<NoiseHistogramBin> bins;
  double sample_variance = 0.0;  // of r = decode(encode(g)) - g
  double predicted_variance = 0.0;  // C^2 V
  // max over bins of |observed - expected| / standard_error; bins with zero
  // expected mass count only if they received samples (reported as inf).
  double max_deviation_in_se = 0.0;
};

// Monte Carlo of the end-to-end noise r with g uniform on [-C, C]. Each
// linear piece of the density is split into `bins_per_piece` equal bins.
absl::StatusOr<NoiseSimulation> SimulateNoise(const BqConfig& config,
                                              int64_t samples, uint64_t seed,
                                              int bins_per_piece = 2);

}  // namespace bqsgd::codec

#endif  // BQSGD_NOISE_SIM_H_
