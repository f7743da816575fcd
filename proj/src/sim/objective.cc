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


#include "bqsgd/sim/objective.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "absl/status/status.h"
#include "absl/strings/str_format.h"
#include "bqsgd/random.h"

namespace bqsgd::sim {
namespace {

// Box-Muller, kept local so generated data does not depend on the standard
// library's normal_distribution.
double StandardNormal(CounterRng& rng) {
  const double u = 1.0 - rng.Uniform();  // (0, 1]
  const double v = rng.Uniform();
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2 * std::numbers::pi * v);
}

double Dot(absl::Span<const double> a, absl::Span<const double> b) {
  double sum = 0.0;
  for (size_t j = 0; j < a.size(); ++j) sum += a[j] * b[j];
  return sum;
}

// log(1 + exp(z)) without overflow.
double Softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double Sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double MaxAugmentedNormSq(const Dataset& data) {
  double best = 0.0;
  for (int64_t i = 0; i < data.size(); ++i) {
    const auto x = data.Row(i);
    best = std::max(best, Dot(x, x) + 1.0);
  }
  return best;
}

}  // namespace

double Objective::Loss(absl::Span<const double> theta) const {
  double sum = 0.0;
  for (int64_t i = 0; i < num_samples(); ++i) sum += SampleLoss(theta, i);
  return sum / static_cast<double>(num_samples());
}

GradientVector Objective::FullGradient(absl::Span<const double> theta) const {
  GradientVector total(dimension(), 0.0), grad(dimension());
  for (int64_t i = 0; i < num_samples(); ++i) {
    SampleGradient(theta, i, absl::MakeSpan(grad));
    for (size_t j = 0; j < grad.size(); ++j) total[j] += grad[j];
  }
  for (double& g : total) g /= static_cast<double>(num_samples());
  return total;
}

QuadraticObjective::QuadraticObjective(Dataset centers)
    : Objective(std::move(centers)), mean_(data_.feature_dim, 0.0) {
  const double n = static_cast<double>(num_samples());
  for (int64_t i = 0; i < num_samples(); ++i) {
    const auto c = data_.Row(i);
    for (size_t j = 0; j < c.size(); ++j) mean_[j] += c[j];
  }
  for (double& m : mean_) m /= n;
  double spread = 0.0;
  for (int64_t i = 0; i < num_samples(); ++i) {
    const auto c = data_.Row(i);
    for (size_t j = 0; j < c.size(); ++j) {
      spread += (c[j] - mean_[j]) * (c[j] - mean_[j]);
    }
  }
  optimal_value_ = 0.5 * spread / n;
}

double QuadraticObjective::SampleLoss(absl::Span<const double> theta,
                                      int64_t sample) const {
  const auto c = data_.Row(sample);
  double sum = 0.0;
  for (size_t j = 0; j < c.size(); ++j) {
    sum += (theta[j] - c[j]) * (theta[j] - c[j]);
  }
  return 0.5 * sum;
}

void QuadraticObjective::SampleGradient(absl::Span<const double> theta,
                                        int64_t sample,
                                        absl::Span<double> grad) const {
  const auto c = data_.Row(sample);
  for (size_t j = 0; j < c.size(); ++j) grad[j] = theta[j] - c[j];
}

// F(theta) = 0.5 ||theta - c_bar||^2 + F(c_bar).
double QuadraticObjective::Loss(absl::Span<const double> theta) const {
  double sum = 0.0;
  for (size_t j = 0; j < mean_.size(); ++j) {
    sum += (theta[j] - mean_[j]) * (theta[j] - mean_[j]);
  }
  return 0.5 * sum + optimal_value_;
}

GradientVector QuadraticObjective::FullGradient(
    absl::Span<const double> theta) const {
  GradientVector grad(mean_.size());
  for (size_t j = 0; j < mean_.size(); ++j) grad[j] = theta[j] - mean_[j];
  return grad;
}

LogisticObjective::LogisticObjective(Dataset data)
    : Objective(std::move(data)),
      smoothness_(MaxAugmentedNormSq(data_) / 4.0) {}

// theta . [x, 1], signed by the label.
double LogisticObjective::Margin(absl::Span<const double> theta,
                                 int64_t sample) const {
  const double z = Dot(theta.first(data_.feature_dim), data_.Row(sample)) +
                   theta[data_.feature_dim];
  return data_.labels[sample] == 1 ? z : -z;
}

double LogisticObjective::SampleLoss(absl::Span<const double> theta,
                                     int64_t sample) const {
  return Softplus(-Margin(theta, sample));
}

void LogisticObjective::SampleGradient(absl::Span<const double> theta,
                                       int64_t sample,
                                       absl::Span<double> grad) const {
  const double sign = data_.labels[sample] == 1 ? 1.0 : -1.0;
  const double scale = -sign * Sigmoid(-Margin(theta, sample));
  const auto x = data_.Row(sample);
  for (size_t j = 0; j < x.size(); ++j) grad[j] = scale * x[j];
  grad[data_.feature_dim] = scale;
}

std::optional<double> LogisticObjective::Accuracy(
    absl::Span<const double> theta) const {
  int64_t correct = 0;
  for (int64_t i = 0; i < num_samples(); ++i) correct += Margin(theta, i) > 0;
  return static_cast<double>(correct) / static_cast<double>(num_samples());
}

SoftmaxObjective::SoftmaxObjective(Dataset data, int64_t num_classes)
    : Objective(std::move(data)),
      num_classes_(num_classes),
      smoothness_(MaxAugmentedNormSq(data_) / 2.0) {}

std::vector<double> SoftmaxObjective::Logits(absl::Span<const double> theta,
                                             int64_t sample) const {
  const int64_t stride = data_.feature_dim + 1;
  const auto x = data_.Row(sample);
  std::vector<double> logits(num_classes_);
  for (int64_t k = 0; k < num_classes_; ++k) {
    const auto w = theta.subspan(k * stride, stride);
    logits[k] = Dot(w.first(data_.feature_dim), x) + w[data_.feature_dim];
  }
  return logits;
}

double SoftmaxObjective::SampleLoss(absl::Span<const double> theta,
                                    int64_t sample) const {
  const std::vector<double> logits = Logits(theta, sample);
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - top);
  return top + std::log(sum) - logits[data_.labels[sample]];
}

void SoftmaxObjective::SampleGradient(absl::Span<const double> theta,
                                      int64_t sample,
                                      absl::Span<double> grad) const {
  std::vector<double> probs = Logits(theta, sample);
  const double top = *std::max_element(probs.begin(), probs.end());
  double sum = 0.0;
  for (double& z : probs) sum += (z = std::exp(z - top));
  const int64_t stride = data_.feature_dim + 1;
  const auto x = data_.Row(sample);
  for (int64_t k = 0; k < num_classes_; ++k) {
    const double coeff =
        probs[k] / sum - (k == data_.labels[sample] ? 1.0 : 0.0);
    auto w = grad.subspan(k * stride, stride);
    for (int64_t j = 0; j < data_.feature_dim; ++j) w[j] = coeff * x[j];
    w[data_.feature_dim] = coeff;
  }
}

std::optional<double> SoftmaxObjective::Accuracy(
    absl::Span<const double> theta) const {
  int64_t correct = 0;
  for (int64_t i = 0; i < num_samples(); ++i) {
    const std::vector<double> logits = Logits(theta, i);
    correct += std::max_element(logits.begin(), logits.end()) -
                   logits.begin() ==
               data_.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(num_samples());
}

double AnalyticQuadraticVariance(int64_t d, double spread) {
  return static_cast<double>(d) * spread * spread / 3.0;
}

absl::StatusOr<std::unique_ptr<Objective>> GenerateSynthetic(
    SyntheticTask task, int64_t d, int64_t n, uint64_t seed,
    const SyntheticOptions& options) {
  if (d < 1 || n < 1) {
    return absl::InvalidArgumentError(
        absl::StrFormat("need d, n >= 1, got d=%d n=%d", d, n));
  }
  CounterRng rng(StreamKey{.seed = seed, .index = kDatasetStream});
  Dataset data;
  data.feature_dim = d;
  data.features.resize(d * n);
  data.labels.assign(n, 0);

  if (task == SyntheticTask::kQuadratic) {
    if (!(options.spread >= 0.0)) {
      return absl::InvalidArgumentError("spread must be non-negative");
    }
    std::vector<double> center(d);
    for (double& c : center) c = 2.0 * rng.Uniform() - 1.0;
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < d; ++j) {
        data.features[i * d + j] =
            center[j] + options.spread * (2.0 * rng.Uniform() - 1.0);
      }
    }
    return std::make_unique<QuadraticObjective>(std::move(data));
  }

  if (!(options.margin > 0.0)) {
    return absl::InvalidArgumentError("margin must be positive");
  }
  // Unit separating direction w. Each sample is isotropic noise with its w
  // component replaced by +-(margin/2 + |N(0,1)|), then shifted by w so the
  // separating hyperplane misses the origin and the bias matters.
  std::vector<double> w(d);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& v : w) v = StandardNormal(rng);
    norm = std::sqrt(Dot(w, w));
  }
  for (double& v : w) v /= norm;
  for (int64_t i = 0; i < n; ++i) {
    const int32_t label = static_cast<int32_t>(rng() & 1);
    auto x = absl::MakeSpan(data.features).subspan(i * d, d);
    for (double& v : x) v = StandardNormal(rng);
    const double along = Dot(x, w);
    const double offset =
        (label == 1 ? 1.0 : -1.0) *
            (0.5 * options.margin + std::abs(StandardNormal(rng))) +
        1.0;
    for (int64_t j = 0; j < d; ++j) x[j] += (offset - along) * w[j];
    data.labels[i] = label;
  }
  return std::make_unique<LogisticObjective>(std::move(data));
}

absl::StatusOr<SyntheticTask> ParseSyntheticTask(const std::string& name) {
  if (name == "quadratic") return SyntheticTask::kQuadratic;
  if (name == "logistic") return SyntheticTask::kLogistic;
  return absl::InvalidArgumentError(
      absl::StrFormat("unknown synthetic task '%s'", name));
}

}  // namespace bqsgd::sim
