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


#include "cli.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "absl/strings/numbers.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_join.h"
#include "bqsgd/noise_sim.h"
#include "bqsgd/planner.h"
#include "bqsgd/privacy.h"
#include "bqsgd/sim/dataset.h"
#include "bqsgd/wire.h"
#include "json.hpp"

namespace bqsgd::cli {
namespace {

using nlohmann::json;

// Typed access to one JSON object with field paths in error messages.
class Fields {
 public:
  static absl::StatusOr<Fields> Of(const json& value, std::string path,
                                   std::set<std::string> allowed) {
    if (!value.is_object()) {
      return absl::InvalidArgumentError(
          absl::StrFormat("%s: expected an object", path));
    }
    for (const auto& [key, unused] : value.items()) {
      if (!allowed.contains(key)) {
        return absl::InvalidArgumentError(
            absl::StrFormat("%s.%s: unknown field", path, key));
      }
    }
    return Fields(value, std::move(path));
  }

  bool Has(const std::string& key) const { return value_.contains(key); }
  std::string Path(const std::string& key) const {
    return absl::StrFormat("%s.%s", path_, key);
  }
  const json& Raw(const std::string& key) const { return value_.at(key); }

  absl::StatusOr<double> Number(const std::string& key) const {
    if (absl::Status s = Require(key); !s.ok()) return s;
    const json& v = value_.at(key);
    if (!v.is_number()) return TypeError(key, "a number");
    return v.get<double>();
  }
  absl::StatusOr<int64_t> Integer(const std::string& key) const {
    if (absl::Status s = Require(key); !s.ok()) return s;
    const json& v = value_.at(key);
    if (!v.is_number_integer()) return TypeError(key, "an integer");
    return v.get<int64_t>();
  }
  absl::StatusOr<uint64_t> Unsigned(const std::string& key) const {
    if (absl::Status s = Require(key); !s.ok()) return s;
    const json& v = value_.at(key);
    if (!v.is_number_unsigned()) return TypeError(key, "a non-negative integer");
    return v.get<uint64_t>();
  }
  absl::StatusOr<std::string> String(const std::string& key) const {
    if (absl::Status s = Require(key); !s.ok()) return s;
    const json& v = value_.at(key);
    if (!v.is_string()) return TypeError(key, "a string");
    return v.get<std::string>();
  }
  absl::StatusOr<bool> Bool(const std::string& key) const {
    if (absl::Status s = Require(key); !s.ok()) return s;
    const json& v = value_.at(key);
    if (!v.is_boolean()) return TypeError(key, "a boolean");
    return v.get<bool>();
  }

 private:
  Fields(const json& value, std::string path)
      : value_(value), path_(std::move(path)) {}

  absl::Status Require(const std::string& key) const {
    if (!value_.contains(key)) {
      return absl::InvalidArgumentError(
          absl::StrFormat("%s: required field is missing", Path(key)));
    }
    return absl::OkStatus();
  }
  absl::Status TypeError(const std::string& key, const char* what) const {
    return absl::InvalidArgumentError(
        absl::StrFormat("%s: expected %s", Path(key), what));
  }

  const json& value_;
  std::string path_;
};

#define BQ_CONCAT_INNER(a, b) a##b
#define BQ_CONCAT(a, b) BQ_CONCAT_INNER(a, b)
#define BQ_ASSIGN_OR_RETURN(lhs, expr) \
  BQ_ASSIGN_OR_RETURN_IMPL(BQ_CONCAT(status_or_, __LINE__), lhs, expr)
#define BQ_ASSIGN_OR_RETURN_IMPL(tmp, lhs, expr) \
  auto tmp = (expr);                             \
  if (!tmp.ok()) return tmp.status();            \
  lhs = *std::move(tmp)

template <typename T, typename Getter>
absl::Status ReadOptional(const Fields& f, const std::string& key, Getter get,
                          T& out) {
  if (!f.Has(key)) return absl::OkStatus();
  auto value = (f.*get)(key);
  if (!value.ok()) return value.status();
  out = *value;
  return absl::OkStatus();
}

absl::Status Invalid(const std::string& path, const std::string& message) {
  return absl::InvalidArgumentError(absl::StrFormat("%s: %s", path, message));
}

absl::StatusOr<ObjectiveSpec> ParseObjective(const json& value) {
  BQ_ASSIGN_OR_RETURN(
      Fields f, Fields::Of(value, "objective",
                           {"kind", "d", "n", "spread", "margin", "images",
                            "labels", "num_classes"}));
  ObjectiveSpec spec;
  BQ_ASSIGN_OR_RETURN(spec.kind, f.String("kind"));
  if (spec.kind == "quadratic" || spec.kind == "logistic") {
    BQ_ASSIGN_OR_RETURN(spec.d, f.Integer("d"));
    BQ_ASSIGN_OR_RETURN(spec.n, f.Integer("n"));
    if (spec.d < 1) return Invalid(f.Path("d"), "must be at least 1");
    if (spec.n < 1) return Invalid(f.Path("n"), "must be at least 1");
    if (absl::Status s = ReadOptional(f, "spread", &Fields::Number, spec.spread);
        !s.ok()) {
      return s;
    }
    if (absl::Status s = ReadOptional(f, "margin", &Fields::Number, spec.margin);
        !s.ok()) {
      return s;
    }
    if (!(spec.spread >= 0)) return Invalid(f.Path("spread"), "must be >= 0");
    if (!(spec.margin > 0)) return Invalid(f.Path("margin"), "must be > 0");
  } else if (spec.kind == "softmax") {
    BQ_ASSIGN_OR_RETURN(spec.images, f.String("images"));
    BQ_ASSIGN_OR_RETURN(spec.labels, f.String("labels"));
    if (f.Has("num_classes")) {
      BQ_ASSIGN_OR_RETURN(spec.num_classes, f.Integer("num_classes"));
      if (*spec.num_classes < 2) {
        return Invalid(f.Path("num_classes"), "must be at least 2");
      }
    }
  } else {
    return Invalid(f.Path("kind"),
                   absl::StrFormat("unknown kind '%s' (expected quadratic, "
                                   "logistic or softmax)",
                                   spec.kind));
  }
  return spec;
}

absl::Status ReadClientFields(const Fields& f, ClientSpec& c) {
  for (absl::Status s : {
           ReadOptional(f, "weight", &Fields::Number, c.weight),
           ReadOptional(f, "batch_size", &Fields::Integer, c.batch_size),
           ReadOptional(f, "bit_budget", &Fields::Integer, c.bit_budget),
           ReadOptional(f, "epsilon", &Fields::Number, c.epsilon),
           ReadOptional(f, "delta", &Fields::Number, c.delta),
       }) {
    if (!s.ok()) return s;
  }
  for (const char* key : {"privacy_dimension", "quant_level", "noise_trials"}) {
    if (!f.Has(key)) continue;
    absl::StatusOr<int64_t> v = f.Integer(key);
    if (!v.ok()) return v.status();
    std::optional<int64_t>& slot =
        std::string(key) == "privacy_dimension" ? c.privacy_dimension
        : std::string(key) == "quant_level"     ? c.quant_level
                                                : c.noise_trials;
    slot = *v;
  }
  return absl::OkStatus();
}

absl::StatusOr<std::vector<ClientSpec>> ParseClients(const json& value) {
  BQ_ASSIGN_OR_RETURN(
      Fields f, Fields::Of(value, "clients",
                           {"count", "batch_size", "bit_budget", "epsilon",
                            "delta", "privacy_dimension", "overrides"}));
  int64_t count;
  BQ_ASSIGN_OR_RETURN(count, f.Integer("count"));
  if (count < 1) return Invalid(f.Path("count"), "must be at least 1");
  ClientSpec base;
  base.weight = 1.0 / static_cast<double>(count);
  BQ_ASSIGN_OR_RETURN(base.batch_size, f.Integer("batch_size"));
  BQ_ASSIGN_OR_RETURN(base.bit_budget, f.Integer("bit_budget"));
  BQ_ASSIGN_OR_RETURN(base.epsilon, f.Number("epsilon"));
  BQ_ASSIGN_OR_RETURN(base.delta, f.Number("delta"));
  if (f.Has("privacy_dimension")) {
    BQ_ASSIGN_OR_RETURN(base.privacy_dimension, f.Integer("privacy_dimension"));
  }
  std::vector<ClientSpec> clients(count, base);

  if (f.Has("overrides")) {
    const json& list = f.Raw("overrides");
    if (!list.is_array()) return Invalid(f.Path("overrides"), "expected a list");
    for (size_t k = 0; k < list.size(); ++k) {
      BQ_ASSIGN_OR_RETURN(
          Fields o,
          Fields::Of(list[k], absl::StrFormat("clients.overrides[%d]", k),
                     {"id", "weight", "batch_size", "bit_budget", "epsilon",
                      "delta", "privacy_dimension", "quant_level",
                      "noise_trials"}));
      int64_t id;
      BQ_ASSIGN_OR_RETURN(id, o.Integer("id"));
      if (id < 0 || id >= count) return Invalid(o.Path("id"), "out of range");
      if (absl::Status s = ReadClientFields(o, clients[id]); !s.ok()) return s;
      if (clients[id].quant_level.has_value() !=
          clients[id].noise_trials.has_value()) {
        return Invalid(o.Path("quant_level"),
                       "quant_level and noise_trials must be given together");
      }
    }
  }

  double weight_sum = 0.0;
  for (size_t i = 0; i < clients.size(); ++i) {
    const ClientSpec& c = clients[i];
    const std::string path = absl::StrFormat("clients[%d]", i);
    if (!(c.weight > 0 && c.weight <= 1)) {
      return Invalid(path + ".weight", "must lie in (0, 1]");
    }
    weight_sum += c.weight;
    if (c.batch_size < 1) return Invalid(path + ".batch_size", "must be >= 1");
    if (c.bit_budget < 1 || c.bit_budget > planner::kMaxBitBudget) {
      return Invalid(path + ".bit_budget",
                     absl::StrFormat("must lie in [1, %d]",
                                     planner::kMaxBitBudget));
    }
    if (absl::Status s =
            privacy::PrivacySpec{.epsilon = c.epsilon, .delta = c.delta}
                .Validate();
        !s.ok()) {
      return Invalid(path, std::string(s.message()));
    }
    if (c.privacy_dimension.has_value() && *c.privacy_dimension < 1) {
      return Invalid(path + ".privacy_dimension", "must be >= 1");
    }
    if (c.quant_level.has_value() &&
        (*c.quant_level < 1 || *c.noise_trials < 0)) {
      return Invalid(path, "need quant_level >= 1 and noise_trials >= 0");
    }
  }
  if (std::abs(weight_sum - 1.0) > 1e-9) {
    return Invalid("clients",
                   absl::StrFormat("weights sum to %.12g, not 1", weight_sum));
  }
  return clients;
}

absl::StatusOr<sim::TrainingConfig> ParseTraining(const json& value) {
  BQ_ASSIGN_OR_RETURN(
      Fields f, Fields::Of(value, "training",
                           {"learning_rate", "rounds", "clip_bound", "seed",
                            "probe_interval", "initial_point"}));
  sim::TrainingConfig t;
  BQ_ASSIGN_OR_RETURN(t.learning_rate, f.Number("learning_rate"));
  BQ_ASSIGN_OR_RETURN(t.rounds, f.Integer("rounds"));
  BQ_ASSIGN_OR_RETURN(t.clip_bound, f.Number("clip_bound"));
  BQ_ASSIGN_OR_RETURN(t.seed, f.Unsigned("seed"));
  if (absl::Status s =
          ReadOptional(f, "probe_interval", &Fields::Integer, t.probe_interval);
      !s.ok()) {
    return s;
  }
  if (!(t.learning_rate >= 0)) {
    return Invalid(f.Path("learning_rate"), "must be >= 0");
  }
  if (t.rounds < 1) return Invalid(f.Path("rounds"), "must be >= 1");
  if (!(t.clip_bound > 0)) return Invalid(f.Path("clip_bound"), "must be > 0");
  if (t.probe_interval < 1) {
    return Invalid(f.Path("probe_interval"), "must be >= 1");
  }
  if (f.Has("initial_point")) {
    const json& v = f.Raw("initial_point");
    if (v.is_number()) {
      // A scalar fills every coordinate once the dimension is known.
      t.initial_point = {v.get<double>()};
    } else if (v.is_array() && !v.empty() &&
               std::all_of(v.begin(), v.end(),
                           [](const json& x) { return x.is_number(); })) {
      t.initial_point = v.get<std::vector<double>>();
    } else {
      return Invalid(f.Path("initial_point"),
                     "expected a number or a non-empty list of numbers");
    }
  }
  return t;
}

absl::StatusOr<NoiseSpec> ParseNoise(const json& value) {
  BQ_ASSIGN_OR_RETURN(
      Fields f, Fields::Of(value, "noise",
                           {"clip_bound", "quant_level", "noise_trials",
                            "q_numerator", "q_denominator", "samples",
                            "grid_points", "bins_per_piece"}));
  NoiseSpec spec;
  BQ_ASSIGN_OR_RETURN(spec.config.clip_bound, f.Number("clip_bound"));
  BQ_ASSIGN_OR_RETURN(spec.config.quant_level, f.Integer("quant_level"));
  BQ_ASSIGN_OR_RETURN(spec.config.noise_trials, f.Integer("noise_trials"));
  int64_t num = 1, den = 2, bins = 2;
  for (absl::Status s : {
           ReadOptional(f, "q_numerator", &Fields::Integer, num),
           ReadOptional(f, "q_denominator", &Fields::Integer, den),
           ReadOptional(f, "samples", &Fields::Integer, spec.samples),
           ReadOptional(f, "grid_points", &Fields::Integer, spec.grid_points),
           ReadOptional(f, "bins_per_piece", &Fields::Integer, bins),
       }) {
    if (!s.ok()) return s;
  }
  if (num < 0 || den < 1 || num > den || den > UINT32_MAX) {
    return Invalid("noise", "q must be a fraction in [0, 1]");
  }
  spec.config.noise_prob = {static_cast<uint32_t>(num),
                            static_cast<uint32_t>(den)};
  spec.bins_per_piece = static_cast<int>(std::clamp<int64_t>(bins, 0, 1000));
  if (absl::Status s = spec.config.Validate(); !s.ok()) {
    return Invalid("noise", std::string(s.message()));
  }
  if (spec.samples < 2) return Invalid(f.Path("samples"), "must be >= 2");
  if (spec.grid_points < 2) return Invalid(f.Path("grid_points"), "must be >= 2");
  if (bins < 1) return Invalid(f.Path("bins_per_piece"), "must be >= 1");
  return spec;
}

absl::StatusOr<GridSpec> ParseGrid(const json& value) {
  BQ_ASSIGN_OR_RETURN(Fields f,
                      Fields::Of(value, "grid",
                                 {"bit_budgets", "epsilons", "seeds"}));
  GridSpec grid;
  for (const char* key : {"bit_budgets", "epsilons", "seeds"}) {
    if (!f.Has(key)) {
      return Invalid(f.Path(key), "required field is missing");
    }
    const json& list = f.Raw(key);
    if (!list.is_array() || list.empty()) {
      return Invalid(f.Path(key), "expected a non-empty list");
    }
    for (const json& v : list) {
      const std::string k = key;
      if (k == "epsilons" && v.is_number() && v.get<double>() > 0) {
        grid.epsilons.push_back(v.get<double>());
      } else if (k == "bit_budgets" && v.is_number_integer() &&
                 v.get<int64_t>() >= 1 &&
                 v.get<int64_t>() <= planner::kMaxBitBudget) {
        grid.bit_budgets.push_back(v.get<int64_t>());
      } else if (k == "seeds" && v.is_number_unsigned()) {
        grid.seeds.push_back(v.get<uint64_t>());
      } else {
        return Invalid(f.Path(key), "contains an invalid entry");
      }
    }
  }
  return grid;
}

absl::StatusOr<sim::Dataset> LoadIdx(const ObjectiveSpec& spec) {
  return sim::LoadIdxDataset(spec.images, spec.labels);
}

int64_t NumClasses(const ObjectiveSpec& spec, const sim::Dataset& data) {
  if (spec.num_classes.has_value()) return *spec.num_classes;
  int32_t top = 1;
  for (int32_t label : data.labels) top = std::max(top, label);
  return top + 1;
}

absl::StatusOr<int64_t> DatasetSize(const ObjectiveSpec& spec) {
  if (spec.kind != "softmax") return spec.n;
  absl::StatusOr<sim::Dataset> data = LoadIdx(spec);
  if (!data.ok()) return data.status();
  return data->size();
}

std::string Fmt(double v) { return absl::StrFormat("%.17g", v); }

absl::Status EnsureDir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    return absl::InvalidArgumentError(
        absl::StrFormat("cannot create output directory %s: %s", dir,
                        ec.message()));
  }
  return absl::OkStatus();
}

std::string OutPath(const ExperimentConfig& config, const std::string& name) {
  return (std::filesystem::path(config.output_dir.empty() ? "."
                                                          : config.output_dir) /
          name)
      .string();
}

int Fail(const absl::Status& status, std::ostream& err) {
  err << "error: " << status.message() << "\n";
  return ExitCodeFor(status);
}

}  // namespace

int ExitCodeFor(const absl::Status& status) {
  switch (status.code()) {
    case absl::StatusCode::kOk:
      return kExitOk;
    case absl::StatusCode::kInvalidArgument:
    case absl::StatusCode::kNotFound:
    case absl::StatusCode::kDataLoss:
      return kExitConfigError;
    case absl::StatusCode::kFailedPrecondition:
      return kExitInfeasible;
    case absl::StatusCode::kAborted:
      return kExitDiverged;
    default:
      return kExitFailure;
  }
}

absl::StatusOr<ExperimentConfig> ParseConfig(const std::string& json_text) {
  json doc = json::parse(json_text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) {
    return absl::InvalidArgumentError("config is not valid JSON");
  }
  BQ_ASSIGN_OR_RETURN(Fields f,
                      Fields::Of(doc, "config",
                                 {"objective", "clients", "training", "output",
                                  "noise", "grid"}));
  ExperimentConfig config;
  for (const char* key : {"objective", "clients"}) {
    if (!f.Has(key)) {
      return absl::InvalidArgumentError(
          absl::StrFormat("%s: required section is missing", key));
    }
  }
  BQ_ASSIGN_OR_RETURN(config.objective, ParseObjective(f.Raw("objective")));
  BQ_ASSIGN_OR_RETURN(config.clients, ParseClients(f.Raw("clients")));
  if (f.Has("training")) {
    BQ_ASSIGN_OR_RETURN(config.training, ParseTraining(f.Raw("training")));
  }
  if (f.Has("output")) {
    BQ_ASSIGN_OR_RETURN(Fields o,
                        Fields::Of(f.Raw("output"), "output", {"dir", "trace"}));
    if (absl::Status s = ReadOptional(o, "dir", &Fields::String,
                                      config.output_dir);
        !s.ok()) {
      return s;
    }
    if (absl::Status s =
            ReadOptional(o, "trace", &Fields::Bool, config.write_trace);
        !s.ok()) {
      return s;
    }
  }
  if (f.Has("noise")) {
    BQ_ASSIGN_OR_RETURN(config.noise, ParseNoise(f.Raw("noise")));
  }
  if (f.Has("grid")) {
    BQ_ASSIGN_OR_RETURN(config.grid, ParseGrid(f.Raw("grid")));
  }

  // Cross-field checks that need the dataset size.
  if (config.objective.kind != "softmax") {
    const int64_t n = config.objective.n;
    const int64_t count = static_cast<int64_t>(config.clients.size());
    if (count > n) {
      return Invalid("clients.count",
                     absl::StrFormat("%d clients exceed %d samples", count, n));
    }
    const std::vector<int64_t> sizes = PartitionSizes(n, count);
    for (int64_t i = 0; i < count; ++i) {
      if (config.clients[i].batch_size > sizes[i]) {
        return Invalid(
            absl::StrFormat("clients[%d].batch_size", i),
            absl::StrFormat("%d exceeds the %d samples held by the client",
                            config.clients[i].batch_size, sizes[i]));
      }
    }
  }
  return config;
}

absl::StatusOr<ExperimentConfig> LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    return absl::NotFoundError(absl::StrFormat("cannot open config %s", path));
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseConfig(buffer.str());
}

absl::StatusOr<int64_t> ModelDimension(const ObjectiveSpec& spec) {
  if (spec.kind == "quadratic") return spec.d;
  if (spec.kind == "logistic") return spec.d + 1;
  absl::StatusOr<sim::Dataset> data = LoadIdx(spec);
  if (!data.ok()) return data.status();
  return NumClasses(spec, *data) * (data->feature_dim + 1);
}

std::vector<int64_t> PartitionSizes(int64_t n, int64_t num_clients) {
  std::vector<int64_t> sizes(num_clients, n / num_clients);
  for (int64_t i = 0; i < n % num_clients; ++i) ++sizes[i];
  return sizes;
}

absl::StatusOr<std::vector<ClientPlanRow>> PlanAll(
    const ExperimentConfig& config) {
  BQ_ASSIGN_OR_RETURN(const int64_t d, ModelDimension(config.objective));
  BQ_ASSIGN_OR_RETURN(const int64_t n, DatasetSize(config.objective));
  const int64_t count = static_cast<int64_t>(config.clients.size());
  if (count > n) {
    return absl::InvalidArgumentError(
        absl::StrFormat("%d clients exceed %d samples", count, n));
  }
  const std::vector<int64_t> sizes = PartitionSizes(n, count);
  std::vector<ClientPlanRow> rows;
  for (int64_t i = 0; i < count; ++i) {
    const ClientSpec& c = config.clients[i];
    const privacy::ClientDataProfile profile{
        .dataset_size = sizes[i],
        .batch_size = c.batch_size,
        .privacy_dimension = c.privacy_dimension.value_or(d)};
    const privacy::PrivacySpec spec{.epsilon = c.epsilon, .delta = c.delta};
    ClientPlanRow row;
    row.client = static_cast<uint32_t>(i);
    row.min_bits = privacy::MinBitsForPrivacy(profile, spec);
    if (c.quant_level.has_value()) {
      const codec::BqConfig bq{.clip_bound = 1.0,
                               .quant_level = *c.quant_level,
                               .noise_trials = *c.noise_trials,
                               .noise_prob = {}};
      row.feasible = true;
      row.quant_level = bq.quant_level;
      row.noise_trials = bq.noise_trials;
      row.bits_per_coord = wire::CodeWidth(bq.quant_level, bq.noise_trials);
      row.variance = codec::NoiseVariance(bq);
      absl::StatusOr<privacy::RoundPrivacy> rp =
          privacy::PerRoundPrivacy(bq, profile, c.delta);
      if (rp.ok()) {
        row.achieved_epsilon = rp->epsilon;
        row.warnings = rp->warnings;
      } else {
        row.achieved_epsilon = std::numeric_limits<double>::infinity();
        row.warnings.push_back(std::string(rp.status().message()));
      }
      if (row.bits_per_coord > c.bit_budget) {
        row.warnings.push_back(absl::StrFormat(
            "explicit (s, m) needs %d bits, over the budget of %d",
            row.bits_per_coord, c.bit_budget));
      }
    } else {
      absl::StatusOr<planner::Plan> plan =
          planner::Solve(profile, spec, c.bit_budget);
      if (!plan.ok()) {
        return absl::InvalidArgumentError(absl::StrFormat(
            "clients[%d]: %s", i, plan.status().message()));
      }
      row.feasible = plan->feasible;
      row.quant_level = plan->quant_level;
      row.noise_trials = plan->noise_trials;
      row.bits_per_coord = plan->bits_per_coord;
      row.achieved_epsilon = plan->achieved_epsilon;
      row.variance = plan->achieved_variance;
      row.warnings = plan->warnings;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

absl::StatusOr<Experiment> BuildExperiment(const ExperimentConfig& config,
                                           uint64_t seed) {
  const ObjectiveSpec& spec = config.objective;
  Experiment exp;
  if (spec.kind == "softmax") {
    BQ_ASSIGN_OR_RETURN(sim::Dataset data, LoadIdx(spec));
    const int64_t k = NumClasses(spec, data);
    for (int32_t label : data.labels) {
      if (label >= k) {
        return absl::InvalidArgumentError(absl::StrFormat(
            "objective.num_classes: label %d needs more than %d classes",
            label, k));
      }
    }
    exp.objective =
        std::make_unique<sim::SoftmaxObjective>(std::move(data), k);
  } else {
    BQ_ASSIGN_OR_RETURN(sim::SyntheticTask task,
                        sim::ParseSyntheticTask(spec.kind));
    BQ_ASSIGN_OR_RETURN(
        exp.objective,
        sim::GenerateSynthetic(task, spec.d, spec.n, seed,
                               {.spread = spec.spread, .margin = spec.margin}));
  }
  BQ_ASSIGN_OR_RETURN(std::vector<ClientPlanRow> plans, PlanAll(config));
  const int64_t count = static_cast<int64_t>(config.clients.size());
  BQ_ASSIGN_OR_RETURN(
      auto parts, sim::PartitionData(exp.objective->num_samples(), count, seed));
  for (int64_t i = 0; i < count; ++i) {
    const ClientSpec& c = config.clients[i];
    if (!plans[i].feasible) {
      return absl::FailedPreconditionError(absl::StrFormat(
          "client %d has no feasible plan: %s", i,
          absl::StrJoin(plans[i].warnings, "; ")));
    }
    sim::ClientConfig client;
    client.id = static_cast<uint32_t>(i);
    client.partition = std::move(parts[i]);
    client.weight = c.weight;
    client.batch_size = c.batch_size;
    client.bit_budget = c.bit_budget;
    client.privacy = {.epsilon = c.epsilon, .delta = c.delta};
    client.privacy_dimension = c.privacy_dimension;
    client.quant_level = plans[i].quant_level;
    client.noise_trials = plans[i].noise_trials;
    if (client.batch_size > static_cast<int64_t>(client.partition.size())) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "clients[%d].batch_size: %d exceeds the %d samples held by the "
          "client",
          i, client.batch_size, client.partition.size()));
    }
    exp.clients.push_back(std::move(client));
  }
  return exp;
}

namespace {

absl::StatusOr<sim::TrainingConfig> ResolveTraining(
    const ExperimentConfig& config, int64_t dimension) {
  if (!config.training.has_value()) {
    return absl::InvalidArgumentError("training: required section is missing");
  }
  sim::TrainingConfig t = *config.training;
  if (t.initial_point.size() == 1 && dimension != 1) {
    t.initial_point.assign(dimension, t.initial_point[0]);
  }
  if (!t.initial_point.empty() &&
      static_cast<int64_t>(t.initial_point.size()) != dimension) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "training.initial_point: %d values for a %d-dimensional model",
        t.initial_point.size(), dimension));
  }
  return t;
}

int Threads() {
  const char* env = std::getenv("BQ_THREADS");
  int threads = 0;
  if (env != nullptr && absl::SimpleAtoi(env, &threads) && threads > 0) {
    return threads;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace

bool GridResult::LossMonotone() const {
  for (size_t b = 0; b < bit_budgets.size(); ++b) {
    for (size_t e = 0; e < epsilons.size(); ++e) {
      const GridCell& cell = at(b, e);
      if (!cell.feasible) continue;
      if (b + 1 < bit_budgets.size() && at(b + 1, e).feasible &&
          at(b + 1, e).mean_final_loss > cell.mean_final_loss) {
        return false;
      }
      if (e + 1 < epsilons.size() && at(b, e + 1).feasible &&
          at(b, e + 1).mean_final_loss > cell.mean_final_loss) {
        return false;
      }
    }
  }
  return true;
}

bool GridResult::AccuracyMonotone() const {
  for (size_t b = 0; b < bit_budgets.size(); ++b) {
    for (size_t e = 0; e < epsilons.size(); ++e) {
      const GridCell& cell = at(b, e);
      if (!cell.feasible || !cell.mean_final_accuracy.has_value()) continue;
      if (b + 1 < bit_budgets.size() && at(b + 1, e).feasible &&
          *at(b + 1, e).mean_final_accuracy < *cell.mean_final_accuracy) {
        return false;
      }
      if (e + 1 < epsilons.size() && at(b, e + 1).feasible &&
          *at(b, e + 1).mean_final_accuracy < *cell.mean_final_accuracy) {
        return false;
      }
    }
  }
  return true;
}

absl::StatusOr<GridResult> RunGrid(const ExperimentConfig& config) {
  if (!config.grid.has_value()) {
    return absl::InvalidArgumentError("grid: required section is missing");
  }
  const GridSpec& grid = *config.grid;
  GridResult result;
  result.bit_budgets = grid.bit_budgets;
  result.epsilons = grid.epsilons;

  struct Job {
    size_t cell;
    uint64_t seed;
    ExperimentConfig config;
  };
  std::vector<Job> jobs;
  for (int64_t b : grid.bit_budgets) {
    for (double eps : grid.epsilons) {
      ExperimentConfig cell_config = config;
      for (ClientSpec& c : cell_config.clients) {
        c.bit_budget = b;
        c.epsilon = eps;
        c.quant_level.reset();
        c.noise_trials.reset();
      }
      GridCell cell;
      cell.bit_budget = b;
      cell.epsilon = eps;
      BQ_ASSIGN_OR_RETURN(std::vector<ClientPlanRow> plans,
                          PlanAll(cell_config));
      for (const ClientPlanRow& p : plans) cell.feasible &= p.feasible;
      if (cell.feasible) {
        for (uint64_t seed : grid.seeds) {
          jobs.push_back({result.cells.size(), seed, cell_config});
        }
      }
      result.cells.push_back(cell);
    }
  }

  struct Outcome {
    absl::Status status;
    double loss = 0.0;
    std::optional<double> accuracy;
  };
  std::vector<Outcome> outcomes(jobs.size());
  auto run_job = [&](size_t j) {
    Job& job = jobs[j];
    absl::StatusOr<Experiment> exp = BuildExperiment(job.config, job.seed);
    if (!exp.ok()) {
      outcomes[j].status = exp.status();
      return;
    }
    absl::StatusOr<sim::TrainingConfig> t =
        ResolveTraining(job.config, exp->objective->dimension());
    if (!t.ok()) {
      outcomes[j].status = t.status();
      return;
    }
    t->seed = job.seed;
    t->threads = 1;
    absl::StatusOr<sim::TrainResult> run =
        sim::Train(*t, exp->clients, *exp->objective);
    if (!run.ok()) {
      outcomes[j].status = run.status();
      return;
    }
    outcomes[j].status = run->status;
    outcomes[j].loss = run->rows.back().loss;
    outcomes[j].accuracy = run->rows.back().accuracy;
  };
  const size_t workers = std::min<size_t>(Threads(), jobs.size());
  {
    std::vector<std::jthread> pool;
    for (size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (size_t j = w; j < jobs.size(); j += workers) run_job(j);
      });
    }
  }

  std::vector<int64_t> runs(result.cells.size(), 0);
  for (size_t j = 0; j < jobs.size(); ++j) {
    if (!outcomes[j].status.ok()) return outcomes[j].status;
    GridCell& cell = result.cells[jobs[j].cell];
    cell.mean_final_loss += outcomes[j].loss;
    if (outcomes[j].accuracy.has_value()) {
      cell.mean_final_accuracy =
          cell.mean_final_accuracy.value_or(0.0) + *outcomes[j].accuracy;
    }
    ++runs[jobs[j].cell];
  }
  for (size_t c = 0; c < result.cells.size(); ++c) {
    if (runs[c] == 0) continue;
    result.cells[c].mean_final_loss /= static_cast<double>(runs[c]);
    if (result.cells[c].mean_final_accuracy.has_value()) {
      *result.cells[c].mean_final_accuracy /= static_cast<double>(runs[c]);
    }
  }
  return result;
}

int RunPlan(const ExperimentConfig& config, std::ostream& out,
            std::ostream& err) {
  absl::StatusOr<std::vector<ClientPlanRow>> rows = PlanAll(config);
  if (!rows.ok()) return Fail(rows.status(), err);
  if (absl::Status s = EnsureDir(config.output_dir.empty() ? "."
                                                           : config.output_dir);
      !s.ok()) {
    return Fail(s, err);
  }
  std::ofstream csv(OutPath(config, "plan.csv"));
  csv << "client,feasible,s,m,achieved_eps,variance,bits_per_coord,min_bits\n";
  out << absl::StrFormat("%-6s %-8s %6s %8s %14s %12s %10s\n", "client",
                         "feasible", "s", "m", "achieved_eps", "V",
                         "bits/coord");
  bool all_feasible = true;
  for (const ClientPlanRow& r : *rows) {
    all_feasible &= r.feasible;
    out << absl::StrFormat("%-6d %-8s %6d %8d %14.6g %12.6g %10d\n", r.client,
                           r.feasible ? "yes" : "no", r.quant_level,
                           r.noise_trials, r.achieved_epsilon, r.variance,
                           r.bits_per_coord);
    csv << r.client << ',' << (r.feasible ? 1 : 0) << ',' << r.quant_level
        << ',' << r.noise_trials << ',' << Fmt(r.achieved_epsilon) << ','
        << Fmt(r.variance) << ',' << r.bits_per_coord << ','
        << Fmt(r.min_bits) << '\n';
    for (const std::string& w : r.warnings) {
      err << absl::StrFormat("client %d: %s\n", r.client, w);
    }
  }
  if (!all_feasible) {
    err << "error: at least one client has no feasible plan\n";
    return kExitInfeasible;
  }
  return kExitOk;
}

int RunTrain(const ExperimentConfig& config, std::ostream& out,
             std::ostream& err) {
  if (!config.training.has_value()) {
    return Fail(
        absl::InvalidArgumentError("training: required section is missing"),
        err);
  }
  absl::StatusOr<std::vector<ClientPlanRow>> plans = PlanAll(config);
  if (!plans.ok()) return Fail(plans.status(), err);
  for (const ClientPlanRow& r : *plans) {
    if (!r.feasible) {
      for (const std::string& w : r.warnings) {
        err << absl::StrFormat("client %d: %s\n", r.client, w);
      }
      err << "error: at least one client has no feasible plan\n";
      return kExitInfeasible;
    }
  }
  absl::StatusOr<Experiment> exp =
      BuildExperiment(config, config.training->seed);
  if (!exp.ok()) return Fail(exp.status(), err);
  absl::StatusOr<sim::TrainingConfig> t =
      ResolveTraining(config, exp->objective->dimension());
  if (!t.ok()) return Fail(t.status(), err);
  const std::string dir = config.output_dir.empty() ? "." : config.output_dir;
  if (absl::Status s = EnsureDir(dir); !s.ok()) return Fail(s, err);
  if (config.write_trace) t->trace_prefix = OutPath(config, "trace_client");

  absl::StatusOr<sim::TrainResult> result =
      sim::Train(*t, exp->clients, *exp->objective);
  if (!result.ok()) return Fail(result.status(), err);
  for (const std::string& w : result->warnings) err << "warning: " << w << "\n";

  {
    std::ofstream csv(OutPath(config, "metrics.csv"));
    sim::WriteMetricsCsv(result->rows, csv);
  }
  for (size_t i = 0; i < result->ledgers.size(); ++i) {
    std::ofstream csv(OutPath(config, absl::StrFormat("ledger_client%d.csv", i)));
    result->ledgers[i].WriteCsv(csv);
  }

  const sim::MetricsRow& last = result->rows.back();
  out << absl::StrFormat("rounds completed: %d\n", last.round);
  out << absl::StrFormat("final loss: %.10g\n", last.loss);
  if (last.accuracy.has_value()) {
    out << absl::StrFormat("final accuracy: %.6f\n", *last.accuracy);
  }
  out << absl::StrFormat("total payload bits: %d\n", last.cumulative_bits);
  for (size_t i = 0; i < result->ledgers.size(); ++i) {
    const privacy::ComposedPrivacy totals = result->ledgers[i].totals();
    out << absl::StrFormat(
        "client %d: (eps, delta) = (%.6g, %.3g) simplified; (%.6g, %.3g) "
        "exact\n",
        i, totals.epsilon_simplified, totals.delta_simplified,
        totals.epsilon_exact, totals.delta_exact);
  }
  if (!result->status.ok()) return Fail(result->status, err);
  return kExitOk;
}

int RunGridCommand(const ExperimentConfig& config, std::ostream& out,
                   std::ostream& err) {
  absl::StatusOr<GridResult> grid = RunGrid(config);
  if (!grid.ok()) return Fail(grid.status(), err);
  const std::string dir = config.output_dir.empty() ? "." : config.output_dir;
  if (absl::Status s = EnsureDir(dir); !s.ok()) return Fail(s, err);
  std::ofstream csv(OutPath(config, "grid.csv"));
  csv << "bit_budget,epsilon,feasible,mean_final_loss,mean_final_accuracy\n";
  out << absl::StrFormat("%10s %12s %9s %16s %14s\n", "bit_budget", "epsilon",
                         "feasible", "mean_loss", "mean_accuracy");
  for (const GridCell& c : grid->cells) {
    const std::string acc =
        c.mean_final_accuracy ? Fmt(*c.mean_final_accuracy) : "";
    csv << c.bit_budget << ',' << Fmt(c.epsilon) << ',' << (c.feasible ? 1 : 0)
        << ',' << (c.feasible ? Fmt(c.mean_final_loss) : "") << ','
        << (c.feasible ? acc : "") << '\n';
    out << absl::StrFormat(
        "%10d %12.6g %9s %16.8g %14s\n", c.bit_budget, c.epsilon,
        c.feasible ? "yes" : "no", c.feasible ? c.mean_final_loss : NAN,
        c.feasible && c.mean_final_accuracy
            ? absl::StrFormat("%.6f", *c.mean_final_accuracy)
            : "-");
  }
  out << "loss nonincreasing in both budgets: "
      << (grid->LossMonotone() ? "yes" : "no") << "\n";
  out << "accuracy nondecreasing in both budgets: "
      << (grid->AccuracyMonotone() ? "yes" : "no") << "\n";
  return kExitOk;
}

int RunNoiseReport(const ExperimentConfig& config, std::ostream& out,
                   std::ostream& err) {
  if (!config.noise.has_value()) {
    return Fail(absl::InvalidArgumentError("noise: required section is missing"),
                err);
  }
  const NoiseSpec& spec = *config.noise;
  const uint64_t seed = config.training ? config.training->seed : 0;
  const codec::NoiseStats stats = codec::NoisePdf(spec.config);
  absl::StatusOr<codec::NoiseSimulation> sim =
      codec::SimulateNoise(spec.config, spec.samples, seed, spec.bins_per_piece);
  if (!sim.ok()) return Fail(sim.status(), err);
  const std::string dir = config.output_dir.empty() ? "." : config.output_dir;
  if (absl::Status s = EnsureDir(dir); !s.ok()) return Fail(s, err);

  {
    std::ofstream csv(OutPath(config, "noise_pdf.csv"));
    csv << "r,density\n";
    const double lo = stats.support_lower(), hi = stats.support_upper();
    const double pad = 0.05 * (hi - lo);
    for (int64_t i = 0; i < spec.grid_points; ++i) {
      const double r = lo - pad + (hi - lo + 2 * pad) * static_cast<double>(i) /
                                      static_cast<double>(spec.grid_points - 1);
      csv << Fmt(r) << ',' << Fmt(stats.Density(r)) << '\n';
    }
  }
  {
    std::ofstream csv(OutPath(config, "noise_histogram.csv"));
    csv << "lower,upper,expected_mass,observed_mass,standard_error,"
           "deviation_in_se\n";
    for (const codec::NoiseHistogramBin& b : sim->bins) {
      const double dev =
          b.standard_error > 0
              ? std::abs(b.observed_mass - b.expected_mass) / b.standard_error
              : 0.0;
      csv << Fmt(b.lower) << ',' << Fmt(b.upper) << ',' << Fmt(b.expected_mass)
          << ',' << Fmt(b.observed_mass) << ',' << Fmt(b.standard_error) << ','
          << Fmt(dev) << '\n';
    }
  }
  out << absl::StrFormat("pieces: %d on [%.6g, %.6g]\n", stats.pieces.size(),
                         stats.support_lower(), stats.support_upper());
  out << absl::StrFormat("samples: %d\n", sim->samples);
  out << absl::StrFormat("variance: predicted %.8g, sample %.8g (%.3f%%)\n",
                         sim->predicted_variance, sim->sample_variance,
                         100.0 * (sim->sample_variance / sim->predicted_variance -
                                  1.0));
  out << absl::StrFormat("max bin deviation: %.3f standard errors\n",
                         sim->max_deviation_in_se);
  return kExitOk;
}

int RunPrivacyReport(const ExperimentConfig& config, int64_t rounds,
                     std::ostream& out, std::ostream& err) {
  if (rounds < 1) {
    return Fail(absl::InvalidArgumentError("--rounds must be at least 1"), err);
  }
  absl::StatusOr<std::vector<ClientPlanRow>> plans = PlanAll(config);
  if (!plans.ok()) return Fail(plans.status(), err);
  absl::StatusOr<int64_t> d = ModelDimension(config.objective);
  if (!d.ok()) return Fail(d.status(), err);
  absl::StatusOr<int64_t> n = DatasetSize(config.objective);
  if (!n.ok()) return Fail(n.status(), err);
  const std::vector<int64_t> sizes =
      PartitionSizes(*n, static_cast<int64_t>(config.clients.size()));

  out << absl::StrFormat("T = %d rounds; composition uses natural logarithms\n",
                         rounds);
  out << absl::StrFormat("%-6s %4s %7s %12s %12s %14s %10s %14s %10s %12s\n",
                         "client", "s", "m", "eps_round", "eps_gauss",
                         "eps_T_exact", "delta_T", "eps_T_simple", "delta_T",
                         "eps_T_inf");
  int code = kExitOk;
  for (size_t i = 0; i < plans->size(); ++i) {
    const ClientPlanRow& p = (*plans)[i];
    const ClientSpec& c = config.clients[i];
    if (!p.feasible) {
      for (const std::string& w : p.warnings) {
        err << absl::StrFormat("client %d: %s\n", i, w);
      }
      code = kExitInfeasible;
      continue;
    }
    const privacy::ClientDataProfile profile{
        .dataset_size = sizes[i],
        .batch_size = c.batch_size,
        .privacy_dimension = c.privacy_dimension.value_or(*d)};
    absl::StatusOr<privacy::RoundPrivacy> rp = privacy::PerRoundPrivacy(
        codec::BqConfig{.clip_bound = 1.0,
                        .quant_level = p.quant_level,
                        .noise_trials = p.noise_trials,
                        .noise_prob = {}},
        profile, c.delta);
    if (!rp.ok()) {
      err << absl::StrFormat("client %d: %s\n", i, rp.status().message());
      code = ExitCodeFor(rp.status());
      continue;
    }
    const privacy::ComposedPrivacy total =
        privacy::Compose({rp->epsilon, rp->delta}, rounds, c.delta);
    out << absl::StrFormat(
        "%-6d %4d %7d %12.6g %12s %14.6g %10.3g %14.6g %10.3g %12.6g\n", i,
        p.quant_level, p.noise_trials, rp->epsilon,
        rp->epsilon_gaussian ? absl::StrFormat("%.6g", *rp->epsilon_gaussian)
                             : "-",
        total.epsilon_exact, total.delta_exact, total.epsilon_simplified,
        total.delta_simplified, total.epsilon_informal);
  }
  return code;
}

int Main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{
      "BQ-SGD: binomial-mechanism quantized distributed SGD toolkit.",
      "bqsgd"};
  app.footer(
      "Logarithms: privacy composition uses natural logarithms (ln); bit "
      "budgets and code widths use log2.\n"
      "Exit codes: 0 success, 2 config error, 3 infeasible plan, 4 "
      "divergence.\n"
      "BQ_THREADS caps worker threads; it never changes results.");
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<uint64_t> seed;
  bool grid = false;
  std::optional<int64_t> rounds;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment JSON file")
        ->required();
    sub->add_option("--out", out_dir, "output directory (overrides config)");
    sub->add_option("--seed", seed, "master seed (overrides config)");
  };
  CLI::App* plan = app.add_subcommand("plan", "solve (s, m) per client");
  CLI::App* train = app.add_subcommand("train", "run BQ-SGD");
  CLI::App* noise =
      app.add_subcommand("noise-report", "density and histogram of BQ noise");
  CLI::App* report = app.add_subcommand(
      "privacy-report", "per-round and composed privacy per client");
  for (CLI::App* sub : {plan, train, noise, report}) add_common(sub);
  train->add_flag("--grid", grid,
                  "sweep the (bit budget, epsilon) grid from the config");
  report->add_option("--rounds", rounds,
                     "number of rounds T (defaults to training.rounds)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }

  absl::StatusOr<ExperimentConfig> config = LoadConfig(config_path);
  if (!config.ok()) return Fail(config.status(), err);
  if (!out_dir.empty()) config->output_dir = out_dir;
  if (seed.has_value() && config->training.has_value()) {
    config->training->seed = *seed;
  }

  if (plan->parsed()) return RunPlan(*config, out, err);
  if (train->parsed()) {
    return grid ? RunGridCommand(*config, out, err)
                : RunTrain(*config, out, err);
  }
  if (noise->parsed()) {
    if (seed.has_value() && !config->training.has_value()) {
      config->training.emplace();
      config->training->seed = *seed;
    }
    return RunNoiseReport(*config, out, err);
  }
  if (!rounds.has_value()) {
    if (!config->training.has_value()) {
      return Fail(absl::InvalidArgumentError(
                      "--rounds is required when the config has no training "
                      "section"),
                  err);
    }
    rounds = config->training->rounds;
  }
  return RunPrivacyReport(*config, *rounds, out, err);
}

}  // namespace bqsgd::cli
