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

#include "bqsgd/privacy.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "absl/strings/str_format.h"
#include "bqsgd/binomial.h"

namespace bqsgd::privacy {

absl::Status PrivacySpec::Validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("epsilon must be positive, got %g", epsilon));
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("delta must lie in (0, 1), got %g", delta));
  }
  return absl::OkStatus();
}

absl::Status ClientDataProfile::Validate() const {
  if (batch_size < 1 || batch_size > dataset_size) {
    return absl::InvalidArgumentError(
        absl::StrFormat("batch size %d must lie in [1, |D| = %d]", batch_size,
                        dataset_size));
  }
  if (privacy_dimension < 1) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "privacy dimension must be >= 1, got %d", privacy_dimension));
  }
  return absl::OkStatus();
}

double BinomialPmax(int64_t trials, double prob) {
  return BinomialMaxMass(trials, prob);
}

double GaussianPmax(int64_t trials) {
  return 1.0 / std::sqrt(2.0 * std::numbers::pi *
                         static_cast<double>(trials) / 4.0);
}

absl::StatusOr<RoundPrivacy> PerRoundPrivacy(const codec::BqConfig& config,
                                             const ClientDataProfile& profile,
                                             double delta) {
  if (absl::Status s = config.Validate(); !s.ok()) return s;
  if (absl::Status s = profile.Validate(); !s.ok()) return s;
  if (!(delta > 0.0 && delta < 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("delta must lie in (0, 1), got %g", delta));
  }
  if (config.noise_trials == 0) {
    return absl::FailedPreconditionError(
        "m = 0: uniform quantization without binomial noise gives no "
        "differential privacy guarantee");
  }

  const double d = static_cast<double>(profile.privacy_dimension);
  const double s = static_cast<double>(config.quant_level);
  const double batch = static_cast<double>(profile.batch_size);
  const double n = static_cast<double>(profile.dataset_size);

  RoundPrivacy out;
  out.delta = delta;
  out.pmax = BinomialPmax(config.noise_trials, config.noise_prob.value());
  out.epsilon = 8.0 * d * s * batch * out.pmax / (n * n * delta);
  if (config.noise_trials > 10) {
    out.epsilon_gaussian =
        6.4 * d * s * batch /
        (n * n * std::sqrt(static_cast<double>(config.noise_trials)) * delta);
  }
  if (profile.batch_size <= 2 * config.quant_level) {
    out.adjacent_bin_assumption = false;
    out.warnings.push_back(absl::StrFormat(
        "batch size L = %d <= 2s = %d: adjacent-bin assumption of the bound "
        "does not hold",
        profile.batch_size, 2 * config.quant_level));
  }
  return out;
}

double PreAmplificationEpsilon(int64_t quant_level, double pmax,
                               const ClientDataProfile& profile,
                               double delta_prime) {
  return 8.0 * static_cast<double>(profile.privacy_dimension) *
         static_cast<double>(quant_level) * pmax /
         (static_cast<double>(profile.batch_size) * delta_prime);
}

EpsilonDelta AmplifyBySubsampling(EpsilonDelta full, int64_t batch_size,
                                  int64_t dataset_size) {
  const double ratio =
      static_cast<double>(batch_size) / static_cast<double>(dataset_size);
  return {ratio * full.epsilon, ratio * full.delta};
}

ComposedPrivacy Compose(EpsilonDelta per_round, int64_t rounds,
                        double delta_prime) {
  const double t = static_cast<double>(rounds);
  const double eps = per_round.epsilon;
  ComposedPrivacy out;
  out.rounds = rounds;
  out.epsilon_exact = std::sqrt(-2.0 * t * std::log(delta_prime)) * eps +
                      t * eps * std::expm1(eps);
  out.delta_exact = t * per_round.delta + delta_prime;
  const double log_inv_delta = -std::log(per_round.delta);
  out.epsilon_simplified = std::sqrt(2.0 * t * log_inv_delta) * eps;
  out.delta_simplified = t * per_round.delta;
  out.epsilon_informal = std::sqrt(t * log_inv_delta) * eps;
  return out;
}

double MinBitsForPrivacy(const ClientDataProfile& profile,
                         const PrivacySpec& spec) {
  const double n = static_cast<double>(profile.dataset_size);
  return 0.5 * std::log2(6.4 * static_cast<double>(profile.privacy_dimension) *
                         static_cast<double>(profile.batch_size) / (n * n)) -
         0.5 * std::log2(spec.epsilon * spec.delta);
}

void PrivacyLedger::Record(int64_t round, EpsilonDelta per_round) {
  max_epsilon_ = std::max(max_epsilon_, per_round.epsilon);
  delta_sum_ += per_round.delta;
  min_delta_ = entries_.empty() ? per_round.delta
                                : std::min(min_delta_, per_round.delta);
  const int64_t count = static_cast<int64_t>(entries_.size()) + 1;
  ComposedPrivacy totals = Compose({max_epsilon_, min_delta_}, count,
                                   delta_prime_.value_or(min_delta_));
  totals.delta_simplified = delta_sum_;
  totals.delta_exact = delta_sum_ + delta_prime_.value_or(min_delta_);
  entries_.push_back(Entry{round, per_round, totals});
}

ComposedPrivacy PrivacyLedger::totals() const {
  if (entries_.empty()) return ComposedPrivacy{};
  return entries_.back().totals;
}

void PrivacyLedger::WriteCsv(std::ostream& out) const {
  out << "round,eps_round,delta_round,eps_total_exact,eps_total_simplified,"
         "delta_total\n";
  for (const Entry& e : entries_) {
    out << absl::StrFormat("%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.round,
                           e.per_round.epsilon, e.per_round.delta,
                           e.totals.epsilon_exact, e.totals.epsilon_simplified,
                           e.totals.delta_simplified);
  }
}

}  // namespace bqsgd::privacy
