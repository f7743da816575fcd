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


#include "bqsgd/sim/train.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "absl/strings/numbers.h"
#include "absl/strings/str_format.h"
#include "bqsgd/random.h"
#include "bqsgd/wire.h"

namespace bqsgd::sim {
namespace {

constexpr double kDivergenceFactor = 1e6;

double SquaredDistance(absl::Span<const double> a, absl::Span<const double> b) {
  double sum = 0.0;
  for (size_t j = 0; j < a.size(); ++j) sum += (a[j] - b[j]) * (a[j] - b[j]);
  return sum;
}

codec::BqConfig CodecConfig(const ClientConfig& client, double clip_bound) {
  return codec::BqConfig{.clip_bound = clip_bound,
                         .quant_level = client.quant_level,
                         .noise_trials = client.noise_trials,
                         .noise_prob = {}};
}

int ResolveThreads(int requested, size_t num_clients) {
  int threads = requested;
  if (threads <= 0) {
    const char* env = std::getenv("BQ_THREADS");
    if (env == nullptr || !absl::SimpleAtoi(env, &threads) || threads <= 0) {
      threads = static_cast<int>(num_clients);
    }
  }
  return std::clamp(threads, 1, static_cast<int>(num_clients));
}

absl::Status ValidateClients(absl::Span<const ClientConfig> clients,
                             const Objective& objective, double clip_bound) {
  if (clients.empty()) return absl::InvalidArgumentError("no clients");
  double weight_sum = 0.0;
  for (size_t i = 0; i < clients.size(); ++i) {
    const ClientConfig& c = clients[i];
    if (i > 0 && c.id <= clients[i - 1].id) {
      return absl::InvalidArgumentError(
          "client ids must be strictly ascending");
    }
    if (!(c.weight > 0.0 && c.weight <= 1.0)) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "client %d: weight %g outside (0, 1]", c.id, c.weight));
    }
    weight_sum += c.weight;
    if (c.batch_size < 1 ||
        c.batch_size > static_cast<int64_t>(c.partition.size())) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "client %d: batch size %d but partition holds %d samples", c.id,
          c.batch_size, c.partition.size()));
    }
    for (int64_t idx : c.partition) {
      if (idx < 0 || idx >= objective.num_samples()) {
        return absl::InvalidArgumentError(absl::StrFormat(
            "client %d: sample index %d out of range", c.id, idx));
      }
    }
    if (absl::Status s = CodecConfig(c, clip_bound).Validate(); !s.ok()) {
      return absl::InvalidArgumentError(
          absl::StrFormat("client %d: %s", c.id, s.message()));
    }
  }
  if (std::abs(weight_sum - 1.0) > 1e-9) {
    return absl::InvalidArgumentError(
        absl::StrFormat("client weights sum to %.12g, not 1", weight_sum));
  }
  return absl::OkStatus();
}

// Mean of per-sample clipped gradients over the whole dataset.
GradientVector MeanClippedGradient(const Objective& objective,
                                   absl::Span<const double> theta,
                                   double clip_bound) {
  GradientVector total(objective.dimension(), 0.0), grad(objective.dimension());
  for (int64_t i = 0; i < objective.num_samples(); ++i) {
    objective.SampleGradient(theta, i, absl::MakeSpan(grad));
    double top = 0.0;
    for (double g : grad) top = std::max(top, std::abs(g));
    const double scale = 1.0 / std::max(1.0, top / clip_bound);
    for (size_t j = 0; j < grad.size(); ++j) total[j] += grad[j] * scale;
  }
  for (double& g : total) g /= static_cast<double>(objective.num_samples());
  return total;
}

}  // namespace

privacy::ClientDataProfile ClientConfig::Profile(
    int64_t model_dimension) const {
  return privacy::ClientDataProfile{
      .dataset_size = static_cast<int64_t>(partition.size()),
      .batch_size = batch_size,
      .privacy_dimension = privacy_dimension.value_or(model_dimension)};
}

absl::StatusOr<planner::Plan> PlanClient(ClientConfig& client,
                                         int64_t model_dimension) {
  absl::StatusOr<planner::Plan> plan = planner::Solve(
      client.Profile(model_dimension), client.privacy, client.bit_budget);
  if (!plan.ok()) return plan.status();
  if (plan->feasible) {
    client.quant_level = plan->quant_level;
    client.noise_trials = plan->noise_trials;
  }
  return plan;
}

absl::StatusOr<LocalStepResult> LocalStep(const ClientConfig& client,
                                          absl::Span<const double> theta,
                                          const Objective& objective,
                                          double clip_bound, uint64_t seed,
                                          int64_t round) {
  const int64_t n = static_cast<int64_t>(client.partition.size());
  if (client.batch_size < 1 || client.batch_size > n) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "client %d: batch size %d but partition holds %d samples", client.id,
        client.batch_size, n));
  }
  absl::StatusOr<codec::Encoder> encoder =
      codec::Encoder::Create(CodecConfig(client, clip_bound));
  if (!encoder.ok()) return encoder.status();

  const StreamKey key{.seed = seed,
                      .client = client.id,
                      .round = static_cast<uint64_t>(round)};
  // Partial Fisher-Yates: the first L entries are a uniform draw without
  // replacement.
  std::vector<int64_t> pool = client.partition;
  CounterRng batch_rng(key.WithIndex(kBatchSamplingStream));
  for (int64_t k = 0; k < client.batch_size; ++k) {
    std::swap(pool[k], pool[k + batch_rng.UniformInt(n - k)]);
  }

  std::vector<GradientVector> grads(client.batch_size,
                                    GradientVector(objective.dimension()));
  double l1_sum = 0.0;
  for (int64_t k = 0; k < client.batch_size; ++k) {
    objective.SampleGradient(theta, pool[k], absl::MakeSpan(grads[k]));
    for (double g : grads[k]) l1_sum += std::abs(g);
  }
  LocalStepResult result;
  absl::StatusOr<GradientVector> clipped =
      codec::ClipBatchAverage(grads, clip_bound);
  if (!clipped.ok()) return clipped.status();
  result.clipped_batch_gradient = *std::move(clipped);
  result.mean_l1_over_clip =
      l1_sum / (clip_bound * static_cast<double>(client.batch_size));

  absl::StatusOr<codec::QuantizedMessage> msg =
      encoder->Encode(result.clipped_batch_gradient, key.WithIndex(0));
  if (!msg.ok()) return msg.status();
  absl::StatusOr<std::vector<uint8_t>> frame =
      wire::EncodeFrame(*msg, static_cast<uint64_t>(round), client.id);
  if (!frame.ok()) return frame.status();
  absl::StatusOr<wire::Frame> received = wire::DecodeFrame(*frame);
  if (!received.ok()) return received.status();
  result.message = std::move(received->message);
  result.frame = *std::move(frame);
  return result;
}

absl::StatusOr<GradientVector> Aggregate(
    absl::Span<const std::optional<codec::QuantizedMessage>> messages,
    absl::Span<const double> weights) {
  if (messages.size() != weights.size()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "%d messages for %d weights", messages.size(), weights.size()));
  }
  if (messages.empty()) return absl::InvalidArgumentError("no clients");
  GradientVector sum;
  for (size_t i = 0; i < messages.size(); ++i) {
    if (!messages[i].has_value()) {
      return absl::FailedPreconditionError(
          absl::StrFormat("incomplete round: client slot %d did not report", i));
    }
    absl::StatusOr<GradientVector> decoded = codec::Decode(*messages[i]);
    if (!decoded.ok()) return decoded.status();
    if (i == 0) sum.assign(decoded->size(), 0.0);
    if (decoded->size() != sum.size()) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "dimension mismatch: %d vs %d", decoded->size(), sum.size()));
    }
    for (size_t j = 0; j < sum.size(); ++j) sum[j] += weights[i] * (*decoded)[j];
  }
  return sum;
}

double AggregateErrorBound(double gradient_variance, double clip_bound,
                           int64_t dimension,
                           absl::Span<const ClientConfig> clients) {
  const double n = static_cast<double>(clients.size());
  double sampling = 0.0, quantization = 0.0;
  for (const ClientConfig& c : clients) {
    const double p2 = c.weight * c.weight;
    sampling += p2 / static_cast<double>(c.batch_size);
    quantization += p2 * codec::NoiseVariance(CodecConfig(c, clip_bound));
  }
  return n * gradient_variance * sampling +
         static_cast<double>(dimension) * n * clip_bound * clip_bound *
             quantization;
}

double ConvergenceBound(double initial_gap, double learning_rate,
                        int64_t rounds, double gradient_variance,
                        double clip_bound, int64_t dimension,
                        absl::Span<const ClientConfig> clients) {
  return 2.0 * initial_gap /
             (static_cast<double>(rounds) * learning_rate) +
         AggregateErrorBound(gradient_variance, clip_bound, dimension,
                             clients);
}

absl::StatusOr<TrainResult> Train(const TrainingConfig& config,
                                  absl::Span<const ClientConfig> clients,
                                  const Objective& objective) {
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
    return absl::InvalidArgumentError("learning rate must be non-negative");
  }
  if (config.rounds < 1) {
    return absl::InvalidArgumentError("rounds must be positive");
  }
  if (!(config.clip_bound > 0.0) || !std::isfinite(config.clip_bound)) {
    return absl::InvalidArgumentError("clip bound must be positive");
  }
  if (config.probe_interval < 1) {
    return absl::InvalidArgumentError("probe interval must be positive");
  }
  const int64_t d = objective.dimension();
  if (absl::Status s = ValidateClients(clients, objective, config.clip_bound);
      !s.ok()) {
    return s;
  }
  if (!config.initial_point.empty() &&
      static_cast<int64_t>(config.initial_point.size()) != d) {
    return absl::InvalidArgumentError(
        absl::StrFormat("initial point has %d coordinates, model has %d",
                        config.initial_point.size(), d));
  }

  TrainResult result;
  if (const auto nu = objective.smoothness();
      nu.has_value() && config.learning_rate > 1.0 / *nu) {
    result.warnings.push_back(absl::StrFormat(
        "learning rate %g exceeds 1/nu = %g", config.learning_rate, 1.0 / *nu));
  }

  // Per-round guarantees are fixed by each client's plan.
  const size_t num_clients = clients.size();
  std::vector<privacy::EpsilonDelta> per_round(num_clients);
  std::vector<double> weights(num_clients);
  int64_t bits_per_round = 0;
  for (size_t i = 0; i < num_clients; ++i) {
    const ClientConfig& c = clients[i];
    weights[i] = c.weight;
    bits_per_round += wire::FrameCostBits(d, c.quant_level, c.noise_trials);
    absl::StatusOr<privacy::RoundPrivacy> rp = privacy::PerRoundPrivacy(
        CodecConfig(c, config.clip_bound), c.Profile(d), c.privacy.delta);
    if (rp.ok()) {
      per_round[i] = {rp->epsilon, rp->delta};
      for (const std::string& w : rp->warnings) {
        result.warnings.push_back(absl::StrFormat("client %d: %s", c.id, w));
      }
    } else {
      per_round[i] = {std::numeric_limits<double>::infinity(),
                      c.privacy.delta};
      result.warnings.push_back(absl::StrFormat(
          "client %d: %s", c.id, rp.status().message()));
    }
    result.ledgers.emplace_back();
  }

  std::vector<std::ofstream> traces;
  if (!config.trace_prefix.empty()) {
    for (const ClientConfig& c : clients) {
      const std::string path =
          absl::StrFormat("%s%d.bin", config.trace_prefix, c.id);
      traces.emplace_back(path, std::ios::binary | std::ios::trunc);
      if (!traces.back()) {
        return absl::InvalidArgumentError(
            absl::StrFormat("cannot open trace file %s", path));
      }
    }
  }

  const int threads = ResolveThreads(config.threads, num_clients);
  result.theta = config.initial_point.empty()
                     ? std::vector<double>(d, 0.0)
                     : config.initial_point;
  std::vector<double>& theta = result.theta;
  const double initial_loss = objective.Loss(theta);

  for (int64_t t = 0; t <= config.rounds; ++t) {
    MetricsRow row;
    row.round = t;
    row.loss = objective.Loss(theta);
    row.cumulative_bits = t * bits_per_round;
    for (const privacy::PrivacyLedger& ledger : result.ledgers) {
      const privacy::ComposedPrivacy totals = ledger.totals();
      row.epsilon_total_simplified =
          std::max(row.epsilon_total_simplified, totals.epsilon_simplified);
      row.epsilon_total_exact =
          std::max(row.epsilon_total_exact, totals.epsilon_exact);
      row.delta_total = std::max(row.delta_total, totals.delta_simplified);
    }
    const bool probe = t % config.probe_interval == 0 || t == config.rounds;
    std::optional<GradientVector> full_grad;
    if (probe || objective.has_cheap_gradient()) {
      full_grad = objective.FullGradient(theta);
      row.grad_norm_sq = std::inner_product(
          full_grad->begin(), full_grad->end(), full_grad->begin(), 0.0);
    }
    if (probe) {
      row.accuracy = objective.Accuracy(theta);
      row.clipping_bias = std::sqrt(SquaredDistance(
          MeanClippedGradient(objective, theta, config.clip_bound),
          *full_grad));
    }

    const bool diverged =
        !std::isfinite(row.loss) ||
        (initial_loss > 0.0 && row.loss > kDivergenceFactor * initial_loss);
    if (diverged || t == config.rounds) {
      result.rows.push_back(row);
      if (diverged) {
        result.status = absl::AbortedError(absl::StrFormat(
            "diverged at round %d: loss %g exceeds %g x initial loss %g", t,
            row.loss, kDivergenceFactor, initial_loss));
      }
      break;
    }

    std::vector<absl::StatusOr<LocalStepResult>> steps(
        num_clients, absl::UnknownError("not run"));
    auto run = [&](size_t first) {
      for (size_t i = first; i < num_clients; i += threads) {
        steps[i] = LocalStep(clients[i], theta, objective, config.clip_bound,
                             config.seed, t);
      }
    };
    if (threads == 1) {
      run(0);
    } else {
      std::vector<std::jthread> workers;
      for (int w = 0; w < threads; ++w) workers.emplace_back(run, w);
    }

    std::vector<std::optional<codec::QuantizedMessage>> messages(num_clients);
    double l1_sum = 0.0;
    for (size_t i = 0; i < num_clients; ++i) {
      if (!steps[i].ok()) return steps[i].status();
      l1_sum += steps[i]->mean_l1_over_clip;
      if (!traces.empty()) {
        traces[i].write(reinterpret_cast<const char*>(steps[i]->frame.data()),
                        static_cast<std::streamsize>(steps[i]->frame.size()));
      }
      messages[i] = std::move(steps[i]->message);
    }
    row.effective_dimension = l1_sum / static_cast<double>(num_clients);
    absl::StatusOr<GradientVector> aggregate = Aggregate(messages, weights);
    if (!aggregate.ok()) return aggregate.status();
    if (full_grad.has_value()) {
      row.aggregate_error_sq = SquaredDistance(*aggregate, *full_grad);
    }
    for (int64_t j = 0; j < d; ++j) {
      theta[j] -= config.learning_rate * (*aggregate)[j];
    }
    for (size_t i = 0; i < num_clients; ++i) {
      result.ledgers[i].Record(t, per_round[i]);
    }
    result.rows.push_back(row);
  }
  return result;
}

namespace {

std::string Field(double v) { return absl::StrFormat("%.17g", v); }

std::string Field(const std::optional<double>& v) {
  return v.has_value() ? Field(*v) : std::string();
}

}  // namespace

void WriteMetricsCsv(absl::Span<const MetricsRow> rows, std::ostream& out) {
  out << kMetricsSchema << "\n"
      << "round,loss,grad_norm_sq,accuracy,cumulative_bits,"
         "eps_total_simplified,eps_total_exact,delta_total,"
         "aggregate_error_sq,clipping_bias,effective_dimension\n";
  for (const MetricsRow& r : rows) {
    out << r.round << ',' << Field(r.loss) << ',' << Field(r.grad_norm_sq)
        << ',' << Field(r.accuracy) << ',' << r.cumulative_bits << ','
        << Field(r.epsilon_total_simplified) << ','
        << Field(r.epsilon_total_exact) << ',' << Field(r.delta_total) << ','
        << Field(r.aggregate_error_sq) << ',' << Field(r.clipping_bias) << ','
        << Field(r.effective_dimension) << '\n';
  }
}

}  // namespace bqsgd::sim
