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

// Chooses the quantization level s and binomial trials m that minimize the
// noise variance V(m, 1/2, s) subject to
//
//   2s + m + 1 <= 2^b                          (bit budget b per coordinate)
//   6.4 d s L / (|D|^2 sqrt(m) delta) = eps    (privacy target)
//
// With R = delta eps |D|^2 / (6.4 d L) the continuous optimum is
//
//   s* = R sqrt(R^2 + 2^b - 1) - R^2,   m* = s*^2 / R^2.
//
// Integerization: s = max(1, round-half-up(s*)), m = floor(m*), then m is
// decremented until the alphabet fits in b bits. The achieved epsilon is
// recomputed from the rounded pair with the exact binomial peak.

#ifndef BQSGD_PLANNER_H_
#define BQSGD_PLANNER_H_

#include <cstdint>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "bqsgd/privacy.h"

namespace bqsgd::planner {

inline constexpr int64_t kMaxBitBudget = 32;

struct Plan {
  int64_t quant_level = 1;   // s
  int64_t noise_trials = 0;  // m
  double privacy_ratio = 0.0;
  int64_t bit_budget = 0;
  // ceil(log2(2s + m + 1)), the wire width actually used.
  int64_t bits_per_coord = 0;
  double achieved_epsilon = 0.0;
  double achieved_variance = 0.0;
  bool feasible = false;

  // Diagnostics.
  double continuous_s = 0.0;
  double continuous_m = 0.0;
  double min_bits = 0.0;
  std::vector<std::string> warnings;

  // BQ parameters with the given clip bound and q = 1/2.
  codec::BqConfig ToConfig(double clip_bound) const;
};

// delta eps |D|^2 / (6.4 d L).
double PrivacyRatio(const privacy::ClientDataProfile& profile,
                    const privacy::PrivacySpec& spec);

// Continuous optimum (s*, m*) for a ratio and bit budget.
struct ContinuousSolution {
  double s;
  double m;
};
ContinuousSolution SolveContinuous(double privacy_ratio, int64_t bit_budget);

// Integer plan. Returns InvalidArgument for malformed inputs; an infeasible
// budget is a successful call with feasible = false and warnings explaining
// why.
absl::StatusOr<Plan> Solve(const privacy::ClientDataProfile& profile,
                           const privacy::PrivacySpec& spec,
                           int64_t bit_budget);

// V(m, 1/2, s) of a feasible plan.
double VarianceOfPlan(const Plan& plan);

}  // namespace bqsgd::planner

#endif  // BQSGD_PLANNER_H_
