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


#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "bqsgd/privacy.h"
#include "bqsgd/sim/dataset.h"
#include "bqsgd/sim/objective.h"
#include "bqsgd/sim/train.h"
#include "bqsgd/wire.h"
#include "test_util.h"

namespace bqsgd::sim {
namespace {

using ::testing::HasSubstr;
using ::testing::SizeIs;

// Two-sided 3-sigma tail mass.
constexpr double kThreeSigmaAlpha = 0.0027;
constexpr int64_t kLossless = (int64_t{1} << 31) - 1;

std::unique_ptr<Objective> Synthetic(SyntheticTask task, int64_t d, int64_t n,
                                     uint64_t seed,
                                     SyntheticOptions options = {}) {
  auto objective = GenerateSynthetic(task, d, n, seed, options);
  EXPECT_TRUE(objective.ok()) << objective.status();
  return *std::move(objective);
}

std::vector<ClientConfig> Clients(const Objective& objective, int64_t n_clients,
                                  int64_t batch, int64_t s, int64_t m,
                                  uint64_t seed = 1) {
  auto parts = PartitionData(objective.num_samples(), n_clients, seed);
  EXPECT_TRUE(parts.ok());
  std::vector<ClientConfig> clients(n_clients);
  for (int64_t i = 0; i < n_clients; ++i) {
    clients[i].id = static_cast<uint32_t>(i);
    clients[i].partition = (*parts)[i];
    clients[i].weight = 1.0 / static_cast<double>(n_clients);
    clients[i].batch_size = batch;
    clients[i].privacy = {.epsilon = 3.44, .delta = 1e-4};
    clients[i].quant_level = s;
    clients[i].noise_trials = m;
  }
  return clients;
}

std::vector<uint8_t> BigEndian(std::initializer_list<uint32_t> words) {
  std::vector<uint8_t> out;
  for (uint32_t w : words) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(w >> shift);
  }
  return out;
}

TEST(PartitionDataTest, EvenSplit) {
  auto parts = PartitionData(12, 4, 7);
  ASSERT_TRUE(parts.ok());
  for (const auto& p : *parts) EXPECT_THAT(p, SizeIs(3));
}

TEST(PartitionDataTest, RemainderRoundRobin) {
  auto parts = PartitionData(13, 4, 7);
  ASSERT_TRUE(parts.ok());
  std::vector<size_t> sizes;
  for (const auto& p : *parts) sizes.push_back(p.size());
  EXPECT_THAT(sizes, ::testing::ElementsAre(4, 3, 3, 3));
}

TEST(PartitionDataTest, DisjointExhaustiveDeterministic) {
  for (int64_t n : {1, 5, 100, 1001}) {
    for (int64_t k : {1, 3, 4}) {
      if (k > n) continue;
      auto a = PartitionData(n, k, 99);
      auto b = PartitionData(n, k, 99);
      ASSERT_TRUE(a.ok());
      EXPECT_EQ(*a, *b);
      std::set<int64_t> seen;
      for (const auto& p : *a) seen.insert(p.begin(), p.end());
      EXPECT_EQ(static_cast<int64_t>(seen.size()), n);
      EXPECT_EQ(*seen.begin(), 0);
      EXPECT_EQ(*seen.rbegin(), n - 1);
    }
  }
  EXPECT_NE(*PartitionData(100, 4, 1), *PartitionData(100, 4, 2));
}

TEST(PartitionDataTest, TooManyClients) {
  EXPECT_EQ(PartitionData(3, 4, 0).status().code(),
            absl::StatusCode::kInvalidArgument);
  EXPECT_EQ(PartitionData(3, 0, 0).status().code(),
            absl::StatusCode::kInvalidArgument);
}

TEST(IdxTest, TwoImageFixture) {
  std::vector<uint8_t> images = BigEndian({0x803, 2, 2, 2});
  for (uint8_t px : {0, 255, 51, 102, 255, 255, 0, 0}) images.push_back(px);
  std::vector<uint8_t> labels = BigEndian({0x801, 2});
  labels.push_back(7);
  labels.push_back(3);
  auto data = ParseIdx(images, labels);
  ASSERT_TRUE(data.ok()) << data.status();
  EXPECT_EQ(data->size(), 2);
  EXPECT_EQ(data->feature_dim, 4);
  EXPECT_THAT(data->Row(0), ::testing::ElementsAre(0.0, 1.0, 0.2, 0.4));
  EXPECT_THAT(data->Row(1), ::testing::ElementsAre(1.0, 1.0, 0.0, 0.0));
  EXPECT_THAT(data->labels, ::testing::ElementsAre(7, 3));
  for (double v : data->features) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }

  const auto dir = std::filesystem::temp_directory_path();
  const std::string img_path = (dir / "bqsgd_idx_images").string();
  const std::string lbl_path = (dir / "bqsgd_idx_labels").string();
  std::ofstream(img_path, std::ios::binary)
      .write(reinterpret_cast<const char*>(images.data()), images.size());
  std::ofstream(lbl_path, std::ios::binary)
      .write(reinterpret_cast<const char*>(labels.data()), labels.size());
  auto loaded = LoadIdxDataset(img_path, lbl_path);
  ASSERT_TRUE(loaded.ok());
  EXPECT_EQ(loaded->features, data->features);
  EXPECT_EQ(LoadIdxDataset(img_path + ".missing", lbl_path).status().code(),
            absl::StatusCode::kNotFound);
}

TEST(IdxTest, FormatErrors) {
  std::vector<uint8_t> images = BigEndian({0x803, 1, 1, 2});
  images.push_back(1);
  images.push_back(2);
  std::vector<uint8_t> labels = BigEndian({0x801, 1});
  labels.push_back(0);
  ASSERT_TRUE(ParseIdx(images, labels).ok());

  std::vector<uint8_t> bad_magic = images;
  bad_magic[3] = 0x02;
  EXPECT_EQ(ParseIdx(bad_magic, labels).status().code(),
            absl::StatusCode::kDataLoss);
  EXPECT_EQ(ParseIdx(images, images).status().code(),
            absl::StatusCode::kDataLoss);
  std::vector<uint8_t> short_payload(images.begin(), images.end() - 1);
  EXPECT_EQ(ParseIdx(short_payload, labels).status().code(),
            absl::StatusCode::kDataLoss);
  std::vector<uint8_t> two_labels = BigEndian({0x801, 2});
  two_labels.push_back(0);
  two_labels.push_back(1);
  EXPECT_EQ(ParseIdx(images, two_labels).status().code(),
            absl::StatusCode::kDataLoss);
  std::vector<uint8_t> zero_dim = BigEndian({0x803, 0, 0, 2});
  EXPECT_EQ(ParseIdx(zero_dim, BigEndian({0x801, 0})).status().code(),
            absl::StatusCode::kDataLoss);
}

void ExpectGradientMatchesFiniteDifferences(const Objective& objective,
                                            uint64_t seed) {
  CounterRng rng(StreamKey{.seed = seed});
  const int64_t d = objective.dimension();
  std::vector<double> grad(d);
  for (int probe = 0; probe < 5; ++probe) {
    std::vector<double> theta(d);
    for (double& v : theta) v = rng.Uniform() - 0.5;
    const int64_t sample = rng.UniformInt(objective.num_samples());
    objective.SampleGradient(theta, sample, absl::MakeSpan(grad));
    for (int64_t j = 0; j < d; ++j) {
      const double h = 1e-5;
      std::vector<double> up = theta, down = theta;
      up[j] += h;
      down[j] -= h;
      const double fd = (objective.SampleLoss(up, sample) -
                         objective.SampleLoss(down, sample)) /
                        (2 * h);
      EXPECT_NEAR(grad[j], fd, 1e-5 * std::max(1.0, std::abs(fd)))
          << "coordinate " << j;
    }
  }
}

TEST(ObjectiveTest, QuadraticFiniteDifferences) {
  ExpectGradientMatchesFiniteDifferences(
      *Synthetic(SyntheticTask::kQuadratic, 8, 50, 3), 11);
}

TEST(ObjectiveTest, LogisticFiniteDifferences) {
  ExpectGradientMatchesFiniteDifferences(
      *Synthetic(SyntheticTask::kLogistic, 8, 50, 3), 12);
}

TEST(ObjectiveTest, SoftmaxFiniteDifferences) {
  Dataset data;
  data.feature_dim = 5;
  CounterRng rng(StreamKey{.seed = 5});
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 5; ++j) data.features.push_back(rng.Uniform());
    data.labels.push_back(static_cast<int32_t>(rng.UniformInt(3)));
  }
  SoftmaxObjective objective(std::move(data), 3);
  EXPECT_EQ(objective.dimension(), 18);
  ExpectGradientMatchesFiniteDifferences(objective, 13);
}

TEST(ObjectiveTest, FullGradientIsSampleAverage) {
  auto quadratic = Synthetic(SyntheticTask::kQuadratic, 6, 40, 4);
  std::vector<double> theta = {0.3, -0.1, 0.0, 2.0, 1.0, -1.0};
  // The base-class average over samples against the closed form override.
  const GradientVector closed = quadratic->FullGradient(theta);
  const GradientVector averaged = quadratic->Objective::FullGradient(theta);
  for (size_t j = 0; j < theta.size(); ++j) {
    EXPECT_NEAR(closed[j], averaged[j], 1e-12);
  }
  EXPECT_NEAR(quadratic->Loss(theta), quadratic->Objective::Loss(theta),
              1e-12);
  auto* q = static_cast<QuadraticObjective*>(quadratic.get());
  EXPECT_NEAR(q->Loss(q->minimizer()), *q->optimal_value(), 1e-15);
}

TEST(SyntheticTest, EqualCentersHaveZeroVariance) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 10, 100, 1,
                             {.spread = 0.0});
  // Zero up to rounding in the center mean.
  EXPECT_NEAR(*objective->gradient_variance(), 0.0, 1e-25);
  EXPECT_NEAR(*objective->optimal_value(), 0.0, 1e-25);
}

TEST(SyntheticTest, QuadraticVarianceMatchesAnalytic) {
  for (uint64_t seed : {1, 2, 3}) {
    auto objective = Synthetic(SyntheticTask::kQuadratic, 50, 2000, seed,
                               {.spread = 0.5});
    const double analytic = AnalyticQuadraticVariance(50, 0.5);
    EXPECT_NEAR(*objective->gradient_variance() / analytic, 1.0, 0.05);
  }
}

TEST(SyntheticTest, RejectsEmptyShapes) {
  EXPECT_FALSE(GenerateSynthetic(SyntheticTask::kQuadratic, 0, 5, 0).ok());
  EXPECT_FALSE(GenerateSynthetic(SyntheticTask::kLogistic, 3, 0, 0).ok());
  EXPECT_TRUE(ParseSyntheticTask("logistic").ok());
  EXPECT_FALSE(ParseSyntheticTask("svm").ok());
}

TEST(SyntheticTest, LogisticBlobsAreSeparableByUnquantizedRun) {
  auto objective = Synthetic(SyntheticTask::kLogistic, 20, 1000, 8);
  auto clients = Clients(*objective, 1, 1000, kLossless, 0);
  const TrainingConfig config{.learning_rate = 1.0 / *objective->smoothness(),
                              .rounds = 500,
                              .clip_bound = 1e3,
                              .seed = 8,
                              .probe_interval = 500};
  auto result = Train(config, clients, *objective);
  ASSERT_TRUE(result.ok()) << result.status();
  ASSERT_TRUE(result->status.ok());
  EXPECT_GE(*result->rows.back().accuracy, 0.99);
}

TEST(LocalStepTest, NearLosslessMatchesClippedGradient) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 30, 200, 2);
  auto clients = Clients(*objective, 2, 16, kLossless, 0);
  std::vector<double> theta(30, 0.25);
  const double c = 0.8;
  auto step = LocalStep(clients[0], theta, *objective, c, 5, 3);
  ASSERT_TRUE(step.ok()) << step.status();
  auto decoded = codec::Decode(step->message);
  ASSERT_TRUE(decoded.ok());
  for (size_t j = 0; j < theta.size(); ++j) {
    EXPECT_LE(std::abs((*decoded)[j] - step->clipped_batch_gradient[j]),
              2 * c / static_cast<double>(kLossless));
    EXPECT_LE(std::abs(step->clipped_batch_gradient[j]), c);
  }
  // The frame carries exactly d codes of the planned width.
  EXPECT_EQ(step->frame.size(), wire::FrameSizeBytes(30, kLossless, 0));
}

TEST(LocalStepTest, CodesRespectPlan) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 100, 200, 2);
  auto clients = Clients(*objective, 1, 32, 2, 251);
  std::vector<double> theta(100, 0.0);
  for (int64_t round = 0; round < 20; ++round) {
    auto step = LocalStep(clients[0], theta, *objective, 0.5, 1, round);
    ASSERT_TRUE(step.ok());
    for (int64_t code : step->message.codes) {
      EXPECT_GE(code, -2);
      EXPECT_LE(code, 2 + 251);
    }
  }
}

TEST(LocalStepTest, BatchLargerThanPartition) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 3, 10, 2);
  auto clients = Clients(*objective, 2, 6, 4, 4);
  EXPECT_EQ(LocalStep(clients[0], std::vector<double>(3, 0.0), *objective, 1.0,
                      0, 0)
                .status()
                .code(),
            absl::StatusCode::kInvalidArgument);
}

TEST(LocalStepTest, UnbiasedAtFixedBatch) {
  // The batch is the whole partition, so only codec randomness varies.
  constexpr int64_t kDim = 12;
  constexpr double kClip = 0.6;
  auto objective = Synthetic(SyntheticTask::kQuadratic, kDim, 64, 6);
  auto clients = Clients(*objective, 2, 32, 3, 20);
  std::vector<double> theta(kDim, 0.1);
  std::vector<testing::RunningStats> stats(kDim);
  GradientVector target;
  for (int64_t round = 0; round < 10'000; ++round) {
    auto step = LocalStep(clients[0], theta, *objective, kClip, 17, round);
    ASSERT_TRUE(step.ok());
    if (round == 0) target = step->clipped_batch_gradient;
    auto decoded = codec::Decode(step->message);
    for (int64_t j = 0; j < kDim; ++j) stats[j].Add((*decoded)[j]);
  }
  // Sum of squared z-scores against the chi-square 3-sigma quantile.
  double chi2 = 0.0;
  for (int64_t j = 0; j < kDim; ++j) {
    const double z = (stats[j].mean() - target[j]) / stats[j].standard_error();
    chi2 += z * z;
  }
  EXPECT_LT(chi2, testing::ChiSquareCritical(kDim, kThreeSigmaAlpha));
}

TEST(AggregateTest, SingleClientIsDecode) {
  const codec::QuantizedMessage msg{
      codec::BqConfig{.clip_bound = 2.0, .quant_level = 4, .noise_trials = 2},
      {-4, 0, 5, 6}};
  std::vector<std::optional<codec::QuantizedMessage>> messages = {msg};
  auto agg = Aggregate(messages, std::vector<double>{1.0});
  ASSERT_TRUE(agg.ok());
  EXPECT_EQ(*agg, *codec::Decode(msg));

  std::vector<std::optional<codec::QuantizedMessage>> four(4, msg);
  auto same = Aggregate(four, std::vector<double>(4, 0.25));
  ASSERT_TRUE(same.ok());
  for (size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR((*same)[j], (*codec::Decode(msg))[j], 1e-15);
  }
}

TEST(AggregateTest, MissingClientIsIncompleteRound) {
  const codec::QuantizedMessage msg{codec::BqConfig{}, {0, 1}};
  std::vector<std::optional<codec::QuantizedMessage>> messages = {
      msg, std::nullopt};
  EXPECT_EQ(Aggregate(messages, std::vector<double>{0.5, 0.5}).status().code(),
            absl::StatusCode::kFailedPrecondition);
  std::vector<std::optional<codec::QuantizedMessage>> mismatched = {
      msg, codec::QuantizedMessage{codec::BqConfig{}, {0}}};
  EXPECT_EQ(
      Aggregate(mismatched, std::vector<double>{0.5, 0.5}).status().code(),
      absl::StatusCode::kInvalidArgument);
  EXPECT_FALSE(Aggregate(messages, std::vector<double>{1.0}).ok());
}

TEST(TrainTest, ZeroLearningRateKeepsTheta) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 10, 100, 3);
  auto clients = Clients(*objective, 4, 8, 2, 251);
  TrainingConfig config{.learning_rate = 0.0, .rounds = 20, .clip_bound = 1.0};
  config.initial_point.assign(10, 0.5);
  auto result = Train(config, clients, *objective);
  ASSERT_TRUE(result.ok());
  EXPECT_EQ(result->theta, config.initial_point);
  ASSERT_THAT(result->rows, SizeIs(21));
  for (const MetricsRow& row : result->rows) {
    EXPECT_EQ(row.loss, result->rows[0].loss);
  }
}

TEST(TrainTest, LosslessFullBatchContractsGeometrically) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 5, 40, 3);
  const auto& q = static_cast<const QuadraticObjective&>(*objective);
  auto clients = Clients(*objective, 1, 40, kLossless, 0);
  const double eta = 0.3;
  TrainingConfig config{.learning_rate = eta, .rounds = 30, .clip_bound = 10};
  config.initial_point = {3.0, -2.0, 1.0, 0.0, 4.0};
  auto result = Train(config, clients, *objective);
  ASSERT_TRUE(result.ok());
  // Gradient norms shrink by (1 - eta)^2 per round up to quantization error.
  const double g0 = *result->rows[0].grad_norm_sq;
  for (const MetricsRow& row : result->rows) {
    EXPECT_NEAR(*row.grad_norm_sq, g0 * std::pow(1 - eta, 2 * row.round),
                1e-6);
  }
  for (size_t j = 0; j < 5; ++j) {
    const double expected =
        q.minimizer()[j] +
        std::pow(1 - eta, 30) * (config.initial_point[j] - q.minimizer()[j]);
    EXPECT_NEAR(result->theta[j], expected, 1e-6);
  }
}

TEST(TrainTest, DivergenceAbortsWithPartialRows) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 4, 40, 3);
  auto clients = Clients(*objective, 1, 40, kLossless, 0);
  TrainingConfig config{.learning_rate = 3.0, .rounds = 100,
                        .clip_bound = 1e9};
  config.initial_point.assign(4, 1.0);
  auto result = Train(config, clients, *objective);
  ASSERT_TRUE(result.ok());
  EXPECT_EQ(result->status.code(), absl::StatusCode::kAborted);
  EXPECT_LT(result->rows.size(), 101u);
  EXPECT_GT(result->rows.back().loss, 1e6 * result->rows.front().loss);
  EXPECT_THAT(result->warnings, ::testing::Contains(HasSubstr("1/nu")));
}

TEST(TrainTest, RejectsBadConfigs) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 4, 40, 3);
  auto clients = Clients(*objective, 2, 8, 2, 4);
  const TrainingConfig config{.learning_rate = 0.1, .rounds = 3};
  EXPECT_TRUE(Train(config, clients, *objective).ok());

  auto unbalanced = clients;
  unbalanced[0].weight = 0.7;
  EXPECT_EQ(Train(config, unbalanced, *objective).status().code(),
            absl::StatusCode::kInvalidArgument);
  auto big_batch = clients;
  big_batch[1].batch_size = 21;
  EXPECT_EQ(Train(config, big_batch, *objective).status().code(),
            absl::StatusCode::kInvalidArgument);
  auto bad_order = clients;
  std::swap(bad_order[0].id, bad_order[1].id);
  EXPECT_FALSE(Train(config, bad_order, *objective).ok());
  TrainingConfig no_rounds = config;
  no_rounds.rounds = 0;
  EXPECT_FALSE(Train(no_rounds, clients, *objective).ok());
  TrainingConfig wrong_init = config;
  wrong_init.initial_point = {1.0};
  EXPECT_FALSE(Train(wrong_init, clients, *objective).ok());
}

TEST(TrainTest, LedgerAndBitAccounting) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 30, 400, 3);
  auto clients = Clients(*objective, 4, 20, 2, 251);
  clients[3].quant_level = 13;
  clients[3].noise_trials = 997;
  const int64_t rounds = 50;
  const TrainingConfig config{.learning_rate = 0.1, .rounds = rounds,
                              .clip_bound = 1.0, .seed = 3};
  auto result = Train(config, clients, *objective);
  ASSERT_TRUE(result.ok());
  int64_t per_round = 0;
  for (const ClientConfig& c : clients) {
    per_round += 30 * wire::CodeWidth(c.quant_level, c.noise_trials);
  }
  EXPECT_EQ(per_round, 30 * (8 * 3 + 10));
  for (const MetricsRow& row : result->rows) {
    EXPECT_EQ(row.cumulative_bits, row.round * per_round);
  }
  for (size_t i = 0; i < clients.size(); ++i) {
    auto rp = privacy::PerRoundPrivacy(
        codec::BqConfig{.clip_bound = 1.0,
                        .quant_level = clients[i].quant_level,
                        .noise_trials = clients[i].noise_trials},
        clients[i].Profile(30), 1e-4);
    ASSERT_TRUE(rp.ok());
    const auto totals = result->ledgers[i].totals();
    EXPECT_EQ(totals.rounds, rounds);
    EXPECT_DOUBLE_EQ(totals.epsilon_simplified,
                     std::sqrt(2.0 * rounds * std::log(1.0 / 1e-4)) *
                         rp->epsilon);
    EXPECT_NEAR(totals.delta_simplified, rounds * 1e-4, 1e-15);
  }
  const double worst = std::max(result->ledgers[0].totals().epsilon_simplified,
                                result->ledgers[3].totals().epsilon_simplified);
  EXPECT_EQ(result->rows.back().epsilon_total_simplified, worst);
  EXPECT_EQ(result->rows.front().epsilon_total_simplified, 0.0);
}

TEST(TrainTest, NoNoiseMeansNoGuarantee) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 4, 40, 3);
  auto clients = Clients(*objective, 1, 8, 4, 0);
  auto result = Train({.rounds = 2}, clients, *objective);
  ASSERT_TRUE(result.ok());
  EXPECT_TRUE(std::isinf(result->rows.back().epsilon_total_simplified));
  EXPECT_THAT(result->warnings, ::testing::Contains(HasSubstr("m = 0")));
}

std::string Csv(const TrainResult& result) {
  std::ostringstream out;
  WriteMetricsCsv(result.rows, out);
  return out.str();
}

TEST(TrainTest, DeterministicAcrossThreadCounts) {
  auto objective = Synthetic(SyntheticTask::kLogistic, 15, 400, 9);
  auto clients = Clients(*objective, 4, 16, 2, 251);
  TrainingConfig config{.learning_rate = 0.2, .rounds = 40, .clip_bound = 0.5,
                        .seed = 77, .probe_interval = 7};
  config.threads = 1;
  auto one = Train(config, clients, *objective);
  config.threads = 4;
  auto four = Train(config, clients, *objective);
  auto again = Train(config, clients, *objective);
  ASSERT_TRUE(one.ok() && four.ok() && again.ok());
  EXPECT_EQ(Csv(*one), Csv(*four));
  EXPECT_EQ(Csv(*four), Csv(*again));
  config.seed = 78;
  EXPECT_NE(Csv(*one), Csv(*Train(config, clients, *objective)));
}

TEST(TrainTest, ProbesFollowInterval) {
  auto objective = Synthetic(SyntheticTask::kLogistic, 5, 100, 9);
  auto clients = Clients(*objective, 2, 10, 4, 16);
  const TrainingConfig config{.learning_rate = 0.1, .rounds = 25,
                              .probe_interval = 10};
  auto result = Train(config, clients, *objective);
  ASSERT_TRUE(result.ok());
  for (const MetricsRow& row : result->rows) {
    const bool probe = row.round % 10 == 0 || row.round == 25;
    EXPECT_EQ(row.grad_norm_sq.has_value(), probe) << row.round;
    EXPECT_EQ(row.accuracy.has_value(), probe) << row.round;
    EXPECT_EQ(row.clipping_bias.has_value(), probe) << row.round;
    EXPECT_EQ(row.effective_dimension.has_value(), row.round < 25);
  }
}

TEST(TrainTest, CsvLayout) {
  auto objective = Synthetic(SyntheticTask::kLogistic, 5, 100, 9);
  auto clients = Clients(*objective, 2, 10, 4, 16);
  auto result = Train({.learning_rate = 0.1, .rounds = 3, .probe_interval = 2},
                      clients, *objective);
  ASSERT_TRUE(result.ok());
  std::istringstream in(Csv(*result));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kMetricsSchema);
  std::getline(in, line);
  EXPECT_EQ(line,
            "round,loss,grad_norm_sq,accuracy,cumulative_bits,"
            "eps_total_simplified,eps_total_exact,delta_total,"
            "aggregate_error_sq,clipping_bias,effective_dimension");
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10);
    ++rows;
  }
  EXPECT_EQ(rows, 4);
}

TEST(TrainTest, TraceFilesHoldEveryFrame) {
  auto objective = Synthetic(SyntheticTask::kQuadratic, 7, 60, 9);
  auto clients = Clients(*objective, 2, 5, 2, 251);
  const std::string prefix =
      (std::filesystem::temp_directory_path() / "bqsgd_trace_client").string();
  TrainingConfig config{.learning_rate = 0.1, .rounds = 6, .seed = 4};
  config.trace_prefix = prefix;
  auto result = Train(config, clients, *objective);
  ASSERT_TRUE(result.ok());
  for (uint32_t id : {0u, 1u}) {
    std::ifstream in(prefix + std::to_string(id) + ".bin", std::ios::binary);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    auto frames = wire::DecodeTrace(bytes);
    ASSERT_TRUE(frames.ok());
    ASSERT_THAT(*frames, SizeIs(6));
    for (uint64_t t = 0; t < 6; ++t) {
      EXPECT_EQ((*frames)[t].round, t);
      EXPECT_EQ((*frames)[t].client_id, id);
      EXPECT_EQ((*frames)[t].message.dimension(), 7u);
    }
  }
}

TEST(AssumptionTest, QuadraticBatchGradientUnbiasedWithBoundedVariance) {
  // One client holding all data, C large enough that clipping never binds.
  constexpr int64_t kDim = 8;
  constexpr int64_t kBatch = 16;
  auto objective = Synthetic(SyntheticTask::kQuadratic, kDim, 200, 21,
                             {.spread = 0.5});
  auto clients = Clients(*objective, 1, kBatch, kLossless, 0);
  std::vector<double> theta(kDim, 0.2);
  const GradientVector grad_f = objective->FullGradient(theta);
  std::vector<testing::RunningStats> stats(kDim);
  testing::RunningStats sq_error;
  for (int64_t round = 0; round < 10'000; ++round) {
    auto step = LocalStep(clients[0], theta, *objective, 10.0, 5, round);
    ASSERT_TRUE(step.ok());
    double err = 0.0;
    for (int64_t j = 0; j < kDim; ++j) {
      const double g = step->clipped_batch_gradient[j];
      stats[j].Add(g);
      err += (g - grad_f[j]) * (g - grad_f[j]);
    }
    sq_error.Add(err);
  }
  double chi2 = 0.0;
  for (int64_t j = 0; j < kDim; ++j) {
    const double z = (stats[j].mean() - grad_f[j]) / stats[j].standard_error();
    chi2 += z * z;
  }
  EXPECT_LT(chi2, testing::ChiSquareCritical(kDim, kThreeSigmaAlpha));
  const double bound = *objective->gradient_variance() / kBatch;
  EXPECT_LT(sq_error.mean() - 3 * sq_error.standard_error(), bound);
  EXPECT_LT(sq_error.mean(), bound);
}

TEST(AssumptionTest, AggregateSecondMomentWithinBound) {
  constexpr int64_t kDim = 20;
  auto objective = Synthetic(SyntheticTask::kQuadratic, kDim, 800, 22,
                             {.spread = 0.5});
  auto clients = Clients(*objective, 4, 16, 2, 251);
  std::vector<double> theta(kDim, 0.0);
  const double clip = 2.0;
  const GradientVector grad_f = objective->FullGradient(theta);
  testing::RunningStats sq_error;
  for (int64_t round = 0; round < 2000; ++round) {
    std::vector<std::optional<codec::QuantizedMessage>> messages;
    for (const ClientConfig& c : clients) {
      auto step = LocalStep(c, theta, *objective, clip, 8, round);
      ASSERT_TRUE(step.ok());
      messages.push_back(step->message);
    }
    auto agg = Aggregate(messages, std::vector<double>(4, 0.25));
    double err = 0.0;
    for (int64_t j = 0; j < kDim; ++j) {
      err += ((*agg)[j] - grad_f[j]) * ((*agg)[j] - grad_f[j]);
    }
    sq_error.Add(err);
  }
  const double bound = AggregateErrorBound(*objective->gradient_variance(),
                                           clip, kDim, clients);
  EXPECT_LT(sq_error.mean(), bound);
  // The codec term alone: sum p^2 d C^2 V, before the factor N.
  const double codec_only =
      kDim * clip * clip * 4 * 0.0625 *
      codec::NoiseVariance({.clip_bound = 1.0, .quant_level = 2,
                            .noise_trials = 251});
  EXPECT_NEAR(sq_error.mean() / codec_only, 1.0, 0.1);
}

}  // namespace
}  // namespace bqsgd::sim
