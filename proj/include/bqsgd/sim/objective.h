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


#ifndef BQSGD_SIM_OBJECTIVE_H_
#define BQSGD_SIM_OBJECTIVE_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "absl/status/statusor.h"
#include "absl/types/span.h"
#include "bqsgd/codec.h"
#include "bqsgd/sim/dataset.h"

namespace bqsgd::sim {

using codec::GradientVector;

// Empirical risk F(theta) = (1/n) sum_i l(theta; xi_i) over an owned dataset.
class Objective {
 public:
  explicit Objective(Dataset data) : data_(std::move(data)) {}
  virtual ~Objective() = default;

  virtual int64_t dimension() const = 0;
  virtual double SampleLoss(absl::Span<const double> theta,
                            int64_t sample) const = 0;
  // Overwrites `grad` (length dimension()).
  virtual void SampleGradient(absl::Span<const double> theta, int64_t sample,
                              absl::Span<double> grad) const = 0;

  // Smoothness constant nu, when known.
  virtual std::optional<double> smoothness() const { return std::nullopt; }
  // F(theta*), when known.
  virtual std::optional<double> optimal_value() const { return std::nullopt; }
  // sigma^2 bounding E||grad l - grad F||^2 for one uniformly drawn sample.
  virtual std::optional<double> gradient_variance() const {
    return std::nullopt;
  }
  // True when FullGradient is cheap enough to evaluate every round.
  virtual bool has_cheap_gradient() const { return false; }
  // Fraction of samples classified correctly; classifiers only.
  virtual std::optional<double> Accuracy(
      absl::Span<const double> /*theta*/) const {
    return std::nullopt;
  }

  virtual double Loss(absl::Span<const double> theta) const;
  virtual GradientVector FullGradient(absl::Span<const double> theta) const;

  const Dataset& data() const { return data_; }
  int64_t num_samples() const { return data_.size(); }

 protected:
  Dataset data_;
};

// l(theta; c) = 0.5 ||theta - c||^2 with the center c stored as the sample.
class QuadraticObjective : public Objective {
 public:
  explicit QuadraticObjective(Dataset centers);

  int64_t dimension() const override { return data_.feature_dim; }
  double SampleLoss(absl::Span<const double> theta,
                    int64_t sample) const override;
  void SampleGradient(absl::Span<const double> theta, int64_t sample,
                      absl::Span<double> grad) const override;
  std::optional<double> smoothness() const override { return 1.0; }
  std::optional<double> optimal_value() const override {
    return optimal_value_;
  }
  // Exact for the stored centers: mean ||c_i - c_bar||^2.
  std::optional<double> gradient_variance() const override {
    return 2.0 * optimal_value_;
  }
  bool has_cheap_gradient() const override { return true; }

  double Loss(absl::Span<const double> theta) const override;
  GradientVector FullGradient(absl::Span<const double> theta) const override;

  const GradientVector& minimizer() const { return mean_; }

 private:
  GradientVector mean_;
  double optimal_value_ = 0.0;
};

// Binary logistic regression on labels {0, 1} with a trailing bias weight.
class LogisticObjective : public Objective {
 public:
  explicit LogisticObjective(Dataset data);

  int64_t dimension() const override { return data_.feature_dim + 1; }
  double SampleLoss(absl::Span<const double> theta,
                    int64_t sample) const override;
  void SampleGradient(absl::Span<const double> theta, int64_t sample,
                      absl::Span<double> grad) const override;
  // max ||[x, 1]||^2 / 4.
  std::optional<double> smoothness() const override { return smoothness_; }
  std::optional<double> Accuracy(
      absl::Span<const double> theta) const override;

 private:
  double Margin(absl::Span<const double> theta, int64_t sample) const;
  double smoothness_ = 0.0;
};

// Multinomial logistic regression; theta holds one weight row (features plus
// bias) per class.
class SoftmaxObjective : public Objective {
 public:
  SoftmaxObjective(Dataset data, int64_t num_classes);

  int64_t dimension() const override {
    return num_classes_ * (data_.feature_dim + 1);
  }
  double SampleLoss(absl::Span<const double> theta,
                    int64_t sample) const override;
  void SampleGradient(absl::Span<const double> theta, int64_t sample,
                      absl::Span<double> grad) const override;
  // max ||[x, 1]||^2 / 2.
  std::optional<double> smoothness() const override { return smoothness_; }
  std::optional<double> Accuracy(
      absl::Span<const double> theta) const override;

 private:
  std::vector<double> Logits(absl::Span<const double> theta,
                             int64_t sample) const;
  int64_t num_classes_;
  double smoothness_ = 0.0;
};

enum class SyntheticTask { kQuadratic, kLogistic };

struct SyntheticOptions {
  // Quadratic: centers are c* + spread * U[-1, 1]^d, so sigma^2 = d spread^2/3.
  double spread = 1.0;
  // Logistic: gap between the two classes along the separating direction.
  double margin = 2.0;
};

// Quadratic: d is the model dimension. Logistic: d features plus a bias.
absl::StatusOr<std::unique_ptr<Objective>> GenerateSynthetic(
    SyntheticTask task, int64_t d, int64_t n, uint64_t seed,
    const SyntheticOptions& options = {});

// sigma^2 of the quadratic generator, d spread^2 / 3.
double AnalyticQuadraticVariance(int64_t d, double spread);

absl::StatusOr<SyntheticTask> ParseSyntheticTask(const std::string& name);

}  // namespace bqsgd::sim

#endif  // BQSGD_SIM_OBJECTIVE_H_
