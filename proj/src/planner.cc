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

#include "bqsgd/planner.h"

#include <algorithm>
#include <cmath>

#include "absl/strings/str_format.h"
#include "bqsgd/wire.h"

namespace bqsgd::planner {

codec::BqConfig Plan::ToConfig(double clip_bound) const {
  return codec::BqConfig{.clip_bound = clip_bound,
                         .quant_level = quant_level,
                         .noise_trials = noise_trials,
                         .noise_prob = {1, 2}};
}

double PrivacyRatio(const privacy::ClientDataProfile& profile,
                    const privacy::PrivacySpec& spec) {
  const double n = static_cast<double>(profile.dataset_size);
  return spec.delta * spec.epsilon * n * n /
         (6.4 * static_cast<double>(profile.privacy_dimension) *
          static_cast<double>(profile.batch_size));
}

ContinuousSolution SolveContinuous(double privacy_ratio, int64_t bit_budget) {
  const double r = privacy_ratio;
  const double levels = std::ldexp(1.0, static_cast<int>(bit_budget)) - 1.0;
  const double s = r * std::sqrt(r * r + levels) - r * r;
  return {s, s * s / (r * r)};
}

absl::StatusOr<Plan> Solve(const privacy::ClientDataProfile& profile,
                           const privacy::PrivacySpec& spec,
                           int64_t bit_budget) {
  if (absl::Status s = profile.Validate(); !s.ok()) return s;
  if (absl::Status s = spec.Validate(); !s.ok()) return s;
  if (bit_budget < 1 || bit_budget > kMaxBitBudget) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "bit budget must lie in [1, %d], got %d", kMaxBitBudget, bit_budget));
  }

  Plan plan;
  plan.bit_budget = bit_budget;
  plan.privacy_ratio = PrivacyRatio(profile, spec);
  plan.min_bits = privacy::MinBitsForPrivacy(profile, spec);

  const double required = std::ceil(plan.min_bits);
  if (static_cast<double>(bit_budget) < required) {
    plan.warnings.push_back(absl::StrFormat(
        "infeasible: budget of %d bits is below the minimum %.4f bits "
        "(needs at least %d)",
        bit_budget, plan.min_bits, static_cast<int64_t>(required)));
    return plan;
  }

  const ContinuousSolution continuous =
      SolveContinuous(plan.privacy_ratio, bit_budget);
  plan.continuous_s = continuous.s;
  plan.continuous_m = continuous.m;

  int64_t s = static_cast<int64_t>(std::floor(continuous.s + 0.5));
  if (s < 1) {
    plan.warnings.push_back(absl::StrFormat(
        "continuous s* = %.4f rounds below 1; clamped to s = 1",
        continuous.s));
    s = 1;
  }
  const int64_t capacity = int64_t{1} << bit_budget;
  int64_t m = static_cast<int64_t>(std::floor(continuous.m));
  m = std::min(m, capacity - 2 * s - 1);
  if (m < 1) {
    plan.quant_level = s;
    plan.noise_trials = std::max<int64_t>(m, 0);
    if (capacity - 2 * s - 1 < 1) {
      plan.warnings.push_back(absl::StrFormat(
          "infeasible: %d bits leave no room for binomial noise at s = %d "
          "(minimum bits %.4f)",
          bit_budget, s, plan.min_bits));
    } else {
      plan.warnings.push_back(absl::StrFormat(
          "infeasible: m* = %.4f rounds down to m = 0 at s = %d; rounding "
          "alone gives no privacy guarantee",
          continuous.m, s));
    }
    return plan;
  }

  plan.quant_level = s;
  plan.noise_trials = m;
  plan.bits_per_coord = wire::CodeWidth(s, m);
  plan.feasible = true;

  const codec::BqConfig config = plan.ToConfig(1.0);
  plan.achieved_variance = codec::NoiseVariance(config);
  absl::StatusOr<privacy::RoundPrivacy> achieved =
      privacy::PerRoundPrivacy(config, profile, spec.delta);
  if (!achieved.ok()) return achieved.status();
  plan.achieved_epsilon = achieved->epsilon;
  for (const std::string& w : achieved->warnings) plan.warnings.push_back(w);
  if (plan.achieved_epsilon > 1.1 * spec.epsilon) {
    plan.warnings.push_back(absl::StrFormat(
        "achieved epsilon %.4g exceeds the target %.4g by more than 10%%",
        plan.achieved_epsilon, spec.epsilon));
  }
  return plan;
}

double VarianceOfPlan(const Plan& plan) {
  return codec::NoiseVariance(plan.ToConfig(1.0));
}

}  // namespace bqsgd::planner
