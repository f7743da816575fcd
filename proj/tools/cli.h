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


// Experiment configuration and subcommand drivers behind the bqsgd binary.

#ifndef BQSGD_TOOLS_CLI_H_
#define BQSGD_TOOLS_CLI_H_

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "bqsgd/codec.h"
#include "bqsgd/sim/objective.h"
#include "bqsgd/sim/train.h"

namespace bqsgd::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfigError = 2,
  kExitInfeasible = 3,
  kExitDiverged = 4,
};

// InvalidArgument, NotFound and DataLoss are config errors;
// FailedPrecondition is infeasible; Aborted is divergence.
int ExitCodeFor(const absl::Status& status);

struct ObjectiveSpec {
  std::string kind;  // quadratic | logistic | softmax
  int64_t d = 0;     // synthetic only
  int64_t n = 0;     // synthetic only
  double spread = 1.0;
  double margin = 2.0;
  std::string images;  // softmax only
  std::string labels;
  std::optional<int64_t> num_classes;
};

struct ClientSpec {
  double weight = 0.0;
  int64_t batch_size = 0;
  int64_t bit_budget = 0;
  double epsilon = 0.0;
  double delta = 0.0;
  std::optional<int64_t> privacy_dimension;
  // Bypass the planner.
  std::optional<int64_t> quant_level;
  std::optional<int64_t> noise_trials;
};

struct NoiseSpec {
  codec::BqConfig config;
  int64_t samples = 1'000'000;
  int64_t grid_points = 201;
  int bins_per_piece = 2;
};

struct GridSpec {
  std::vector<int64_t> bit_budgets;
  std::vector<double> epsilons;
  std::vector<uint64_t> seeds;
};

struct ExperimentConfig {
  ObjectiveSpec objective;
  std::vector<ClientSpec> clients;
  std::optional<sim::TrainingConfig> training;
  std::string output_dir;
  bool write_trace = false;
  std::optional<NoiseSpec> noise;
  std::optional<GridSpec> grid;
};

// Validates the JSON document against the schema in the README. Errors name
// the offending field, e.g. "clients.delta: required field is missing".
absl::StatusOr<ExperimentConfig> ParseConfig(const std::string& json_text);
absl::StatusOr<ExperimentConfig> LoadConfig(const std::string& path);

// Model dimension implied by the objective spec; reads only the IDX headers.
absl::StatusOr<int64_t> ModelDimension(const ObjectiveSpec& spec);

// Samples held by each client after partitioning n samples.
std::vector<int64_t> PartitionSizes(int64_t n, int64_t num_clients);

struct ClientPlanRow {
  uint32_t client = 0;
  bool feasible = false;
  int64_t quant_level = 0;
  int64_t noise_trials = 0;
  int64_t bits_per_coord = 0;
  double achieved_epsilon = 0.0;
  double variance = 0.0;
  double min_bits = 0.0;
  std::vector<std::string> warnings;
};

// Solves (s, m) per client, honouring explicit overrides.
absl::StatusOr<std::vector<ClientPlanRow>> PlanAll(
    const ExperimentConfig& config);

// Materialises the objective and client list ready for sim::Train.
struct Experiment {
  std::unique_ptr<sim::Objective> objective;
  std::vector<sim::ClientConfig> clients;
};
absl::StatusOr<Experiment> BuildExperiment(const ExperimentConfig& config,
                                           uint64_t seed);

struct GridCell {
  int64_t bit_budget;
  double epsilon;
  bool feasible = true;
  double mean_final_loss = 0.0;
  std::optional<double> mean_final_accuracy;
};

struct GridResult {
  std::vector<int64_t> bit_budgets;
  std::vector<double> epsilons;
  std::vector<GridCell> cells;  // row-major: bit budget major, epsilon minor

  const GridCell& at(size_t b, size_t e) const {
    return cells[b * epsilons.size() + e];
  }
  // Seed-averaged loss nonincreasing along both axes.
  bool LossMonotone() const;
  // Seed-averaged accuracy nondecreasing along both axes.
  bool AccuracyMonotone() const;
};

// Trains every (b, eps) pair for every seed; all clients take the cell's
// budget and epsilon.
absl::StatusOr<GridResult> RunGrid(const ExperimentConfig& config);

// Subcommands. Each returns a process exit code and writes its report to out
// and diagnostics to err.
int RunPlan(const ExperimentConfig& config, std::ostream& out,
            std::ostream& err);
int RunTrain(const ExperimentConfig& config, std::ostream& out,
             std::ostream& err);
int RunGridCommand(const ExperimentConfig& config, std::ostream& out,
                   std::ostream& err);
int RunNoiseReport(const ExperimentConfig& config, std::ostream& out,
                   std::ostream& err);
int RunPrivacyReport(const ExperimentConfig& config, int64_t rounds,
                     std::ostream& out, std::ostream& err);

// Entry point: parses argv with CLI11 and dispatches.
int Main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace bqsgd::cli

#endif  // BQSGD_TOOLS_CLI_H_
