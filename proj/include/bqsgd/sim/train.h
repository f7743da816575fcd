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


#ifndef BQSGD_SIM_TRAIN_H_
#define BQSGD_SIM_TRAIN_H_

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/types/span.h"
#include "bqsgd/codec.h"
#include "bqsgd/planner.h"
#include "bqsgd/privacy.h"
#include "bqsgd/sim/objective.h"

namespace bqsgd::sim {

struct ClientConfig {
  uint32_t id = 0;
  std::vector<int64_t> partition;  // sample indices into the objective
  double weight = 1.0;             // p_i
  int64_t batch_size = 1;          // L
  int64_t bit_budget = 8;
  privacy::PrivacySpec privacy;
  // Dimension used by the privacy bound; defaults to the model dimension.
  std::optional<int64_t> privacy_dimension;
  // Codec parameters. PlanClient fills these from the planner.
  int64_t quant_level = 1;
  int64_t noise_trials = 0;

  privacy::ClientDataProfile Profile(int64_t model_dimension) const;
};

// Runs the planner for `client` and stores (s, m). Returns the plan so the
// caller can inspect feasibility and warnings.
absl::StatusOr<planner::Plan> PlanClient(ClientConfig& client,
                                         int64_t model_dimension);

struct TrainingConfig {
  double learning_rate = 0.1;  // eta
  int64_t rounds = 1;          // T
  double clip_bound = 1.0;     // C
  uint64_t seed = 0;
  // theta_0; zeros when empty.
  std::vector<double> initial_point;
  // Rounds between full-dataset probes when the gradient is expensive.
  int64_t probe_interval = 10;
  // Worker threads for client steps. 0 reads BQ_THREADS, then falls back to
  // one thread per client.
  int threads = 0;
  // When set, every wire frame of client i is appended to
  // "<trace_prefix><i>.bin".
  std::string trace_prefix;
};

struct MetricsRow {
  int64_t round = 0;
  double loss = 0.0;
  std::optional<double> grad_norm_sq;  // ||grad F(theta_t)||^2
  std::optional<double> accuracy;
  int64_t cumulative_bits = 0;  // payload bits sent before theta_t
  // Worst client after t rounds.
  double epsilon_total_simplified = 0.0;
  double epsilon_total_exact = 0.0;
  double delta_total = 0.0;
  // ||g_bar_t - grad F(theta_t)||^2 for the update leaving theta_t.
  std::optional<double> aggregate_error_sq;
  // ||mean clip(grad l) - grad F|| over the full dataset.
  std::optional<double> clipping_bias;
  // Mean ||grad l||_1 / C over the sampled batches of round t.
  std::optional<double> effective_dimension;
};

struct LocalStepResult {
  codec::QuantizedMessage message;
  GradientVector clipped_batch_gradient;
  double mean_l1_over_clip = 0.0;
  std::vector<uint8_t> frame;
};

// One client's contribution for `round`: sample a batch without replacement,
// clip, encode, and pass through a wire frame.
absl::StatusOr<LocalStepResult> LocalStep(const ClientConfig& client,
                                          absl::Span<const double> theta,
                                          const Objective& objective,
                                          double clip_bound, uint64_t seed,
                                          int64_t round);

// sum_i p_i decode(msg_i) in ascending client order. A missing message is
// FailedPrecondition.
absl::StatusOr<GradientVector> Aggregate(
    absl::Span<const std::optional<codec::QuantizedMessage>> messages,
    absl::Span<const double> weights);

struct TrainResult {
  // Rows for theta_0 .. theta_T, or up to the divergence point.
  std::vector<MetricsRow> rows;
  std::vector<double> theta;
  std::vector<privacy::PrivacyLedger> ledgers;
  std::vector<std::string> warnings;
  // OK, or Aborted when the loss diverged.
  absl::Status status;
};

// BQ-SGD. Configuration errors are returned directly; divergence is reported
// in TrainResult::status alongside the partial rows.
absl::StatusOr<TrainResult> Train(const TrainingConfig& config,
                                  absl::Span<const ClientConfig> clients,
                                  const Objective& objective);

// Right-hand side of the convergence bound:
// 2 (F0 - F*) / (T eta) + N sigma^2 sum p_i^2 / L_i + N d C^2 sum p_i^2 V_i.
double ConvergenceBound(double initial_gap, double learning_rate,
                        int64_t rounds, double gradient_variance,
                        double clip_bound, int64_t dimension,
                        absl::Span<const ClientConfig> clients);

// N sigma^2 sum p_i^2 / L_i + d N C^2 sum p_i^2 V_i; the bound on
// E||g_bar - grad F||^2 for one aggregated update.
double AggregateErrorBound(double gradient_variance, double clip_bound,
                           int64_t dimension,
                           absl::Span<const ClientConfig> clients);

inline constexpr char kMetricsSchema[] = "# bqsgd-metrics v1";

// Schema line, header, then one line per row; %.17g, empty for missing.
void WriteMetricsCsv(absl::Span<const MetricsRow> rows, std::ostream& out);

}  // namespace bqsgd::sim

#endif  // BQSGD_SIM_TRAIN_H_
