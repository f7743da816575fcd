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

#ifndef BQSGD_BINOMIAL_H_
#define BQSGD_BINOMIAL_H_

#include <cstdint>
#include <vector>

#include "bqsgd/random.h"

namespace bqsgd {

// log C(m, k) q^k (1-q)^(m-k), evaluated with log-gamma. Returns -inf for k
// outside [0, m].
double LogBinomialPmf(int64_t m, int64_t k, double q);

// Full mass function P_0..P_m of Bin(m, q).
std::vector<double> BinomialPmf(int64_t m, double q);

// max_k P_k, exact up to floating point; the maximizer is located in closed
// form (mode of the binomial) rather than by scanning.
double BinomialMaxMass(int64_t m, double q);

// Draws from Bin(m, q). Small m sums Bernoulli trials; larger m inverts a
// precomputed CDF with a single uniform.
class BinomialSampler {
 public:
  static constexpr int64_t kMaxDirectTrials = 64;

  BinomialSampler(int64_t trials, double prob);

  int64_t Sample(CounterRng& rng) const;

  int64_t trials() const { return trials_; }
  double prob() const { return prob_; }

 private:
  int64_t trials_;
  double prob_;
  std::vector<double> cdf_;  // only for trials_ > kMaxDirectTrials
};

}  // namespace bqsgd

#endif  // BQSGD_BINOMIAL_H_
