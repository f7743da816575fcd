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

#include "bqsgd/binomial.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace bqsgd {

double LogBinomialPmf(int64_t m, int64_t k, double q) {
  if (k < 0 || k > m) return -std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(m);
  const double x = static_cast<double>(k);
  double log_choose =
      std::lgamma(n + 1.0) - std::lgamma(x + 1.0) - std::lgamma(n - x + 1.0);
  // Avoid 0 * log(0) when q^0 or (1-q)^0.
  double log_mass = log_choose;
  if (k > 0) log_mass += x * std::log(q);
  if (k < m) log_mass += (n - x) * std::log1p(-q);
  return log_mass;
}

std::vector<double> BinomialPmf(int64_t m, double q) {
  std::vector<double> pmf(static_cast<size_t>(m) + 1);
  for (int64_t k = 0; k <= m; ++k) {
    pmf[static_cast<size_t>(k)] = std::exp(LogBinomialPmf(m, k, q));
  }
  return pmf;
}

double BinomialMaxMass(int64_t m, double q) {
  if (m == 0) return 1.0;
  // The mode is floor((m+1)q), or both it and its left neighbour on ties.
  const int64_t mode = std::clamp<int64_t>(
      static_cast<int64_t>(std::floor((static_cast<double>(m) + 1.0) * q)), 0,
      m);
  double best = -std::numeric_limits<double>::infinity();
  for (int64_t k = std::max<int64_t>(0, mode - 1);
       k <= std::min<int64_t>(m, mode + 1); ++k) {
    best = std::max(best, LogBinomialPmf(m, k, q));
  }
  return std::exp(best);
}

BinomialSampler::BinomialSampler(int64_t trials, double prob)
    : trials_(trials), prob_(prob) {
  if (trials_ > kMaxDirectTrials) {
    cdf_ = BinomialPmf(trials_, prob_);
    double running = 0.0;
    for (double& c : cdf_) {
      running += c;
      c = running;
    }
    for (double& c : cdf_) c /= running;
    cdf_.back() = 1.0;
  }
}

int64_t BinomialSampler::Sample(CounterRng& rng) const {
  if (trials_ == 0) return 0;
  if (trials_ <= kMaxDirectTrials) {
    if (prob_ == 0.5) {
      // m fair coin flips are m independent random bits.
      uint64_t bits = rng();
      if (trials_ < 64) bits &= (uint64_t{1} << trials_) - 1;
      return std::popcount(bits);
    }
    int64_t successes = 0;
    for (int64_t i = 0; i < trials_; ++i) {
      if (rng.Uniform() < prob_) ++successes;
    }
    return successes;
  }
  const double u = rng.Uniform();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return std::min<int64_t>(it - cdf_.begin(), trials_);
}

}  // namespace bqsgd
