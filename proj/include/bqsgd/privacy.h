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

// (epsilon, delta) accounting for binomial-noise quantized SGD.
//
// Logarithm convention: every log in a composition formula is natural; bit
// counts use log2.

#ifndef BQSGD_PRIVACY_H_
#define BQSGD_PRIVACY_H_

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "bqsgd/codec.h"

namespace bqsgd::privacy {

struct EpsilonDelta {
  double epsilon = 0.0;
  double delta = 0.0;
};

// Target (epsilon, delta) a client must meet per round.
struct PrivacySpec {
  double epsilon = 1.0;
  double delta = 1e-5;

  absl::Status Validate() const;
};

struct ClientDataProfile {
  int64_t dataset_size = 1;  // |D|
  int64_t batch_size = 1;    // L
  // Dimension entering the sensitivity bound. Usually the model parameter
  // count; may be overridden with an effective dimension ||grad||_1 / C.
  int64_t privacy_dimension = 1;

  absl::Status Validate() const;
};

// max_k P(Bin(m, q) = k), computed in log space.
double BinomialPmax(int64_t trials, double prob);

// De Moivre-Laplace approximation 1 / sqrt(2 pi m / 4) of the q = 1/2 peak.
double GaussianPmax(int64_t trials);

struct RoundPrivacy {
  // 8 d s L Pmax / (|D|^2 delta) with exact Pmax.
  double epsilon = 0.0;
  double delta = 0.0;
  double pmax = 0.0;
  // 6.4 d s L / (|D|^2 sqrt(m) delta); reported only for m > 10.
  std::optional<double> epsilon_gaussian;
  // The bound assumes adjacent gradients land in adjacent quantization bins,
  // which needs L > 2s.
  bool adjacent_bin_assumption = true;
  std::vector<std::string> warnings;
};

// Per-round guarantee of one BQ message. Fails with FailedPrecondition when
// m = 0: rounding alone gives no guarantee.
absl::StatusOr<RoundPrivacy> PerRoundPrivacy(const codec::BqConfig& config,
                                             const ClientDataProfile& profile,
                                             double delta);

// Guarantee of one full-batch release before subsampling:
// 8 d s Pmax / (L delta').
double PreAmplificationEpsilon(int64_t quant_level, double pmax,
                               const ClientDataProfile& profile,
                               double delta_prime);

// Linear amplification by sampling L of |D| records.
EpsilonDelta AmplifyBySubsampling(EpsilonDelta full, int64_t batch_size,
                                  int64_t dataset_size);

struct ComposedPrivacy {
  int64_t rounds = 0;
  // sqrt(-2 T ln delta') eps + T eps (e^eps - 1), with T delta + delta'.
  double epsilon_exact = 0.0;
  double delta_exact = 0.0;
  // sqrt(2 T ln(1/delta)) eps, with T delta. Canonical headline figure.
  double epsilon_simplified = 0.0;
  double delta_simplified = 0.0;
  // sqrt(T ln(1/delta)) eps; informational only.
  double epsilon_informal = 0.0;
};

// T-fold adaptive composition of a homogeneous per-round guarantee.
ComposedPrivacy Compose(EpsilonDelta per_round, int64_t rounds,
                        double delta_prime);

// Lower bound on bits per coordinate able to meet the target:
// (1/2) log2(6.4 d L / |D|^2) - (1/2) log2(eps delta).
double MinBitsForPrivacy(const ClientDataProfile& profile,
                         const PrivacySpec& spec);

// Running per-client record. Written by one owner; copy to snapshot.
class PrivacyLedger {
 public:
  struct Entry {
    int64_t round;
    EpsilonDelta per_round;
    ComposedPrivacy totals;
  };

  // delta_prime is the composition slack; it defaults to the per-round delta
  // when unset.
  explicit PrivacyLedger(std::optional<double> delta_prime = std::nullopt)
      : delta_prime_(delta_prime) {}

  // Appends one round. Totals compose the largest per-round epsilon seen so
  // far, which is exact for homogeneous runs.
  void Record(int64_t round, EpsilonDelta per_round);

  const std::vector<Entry>& entries() const { return entries_; }
  // Totals after the last recorded round; all zero when empty.
  ComposedPrivacy totals() const;

  // Columns: round,eps_round,delta_round,eps_total_exact,
  // eps_total_simplified,delta_total. delta_total is T * delta.
  void WriteCsv(std::ostream& out) const;

 private:
  std::optional<double> delta_prime_;
  std::vector<Entry> entries_;
  double max_epsilon_ = 0.0;
  double min_delta_ = 0.0;
  double delta_sum_ = 0.0;
};

}  // namespace bqsgd::privacy

#endif  // BQSGD_PRIVACY_H_
