#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "costroute/dataset.hpp"
#include "costroute/evaluation.hpp"
#include "costroute/predictors.hpp"
#include "costroute/representations.hpp"
#include "costroute/routing.hpp"

namespace costroute {

// Error raised by a pipeline stage; what() is "<stage>: <cause>".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause);
  [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct RepresentationSpec {
  std::size_t clusters = 20;
  std::vector<std::size_t> candidates;  // non-empty: pick the count by elbow test
  double sample_frac = 0.2;
  std::size_t max_iters = 100;
  std::uint64_t seed = 0;
};

struct AblationSpec {
  bool enabled = false;
  std::vector<Architecture> quality{Architecture::regression, Architecture::fcn2, Architecture::fcn3,
                                    Architecture::attention};
  std::vector<Architecture> cost{Architecture::regression, Architecture::fcn2, Architecture::fcn3,
                                 Architecture::attention};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> dataset;  // canonical dataset file
  std::optional<SynthSpec> synth;                // used when no dataset path is given
  std::uint64_t synth_seed = 0;
  bool normalize = true;
  SplitSpec split;
  std::vector<std::string> pool;  // empty: keep the whole pool
  RepresentationSpec representations;
  PredictorConfig quality = PredictorConfig::defaults(Architecture::attention, Target::quality);
  PredictorConfig cost = PredictorConfig::defaults(Architecture::attention, Target::cost);
  RewardFamily reward = RewardFamily::exponential_r2;
  std::vector<double> lambda_grid = log_lambda_grid();
  std::string strongest_model;  // empty: highest mean training cost
  bool absolute_sensitivity = false;
  AblationSpec ablation;
  std::filesystem::path output_dir = "costroute-out";

  // Keys absent from `j` keep their defaults; sub-seeds that are not given are
  // derived from "seed".
  static ExperimentConfig from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::json to_json() const;
  void validate() const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Parses "a,b,c" or "log:<lo>:<hi>:<count>".
std::vector<double> parse_lambda_grid(const std::string& text);

// Load or synthesize, subset the pool, normalize embeddings.
RoutingDataset prepare_dataset(const ExperimentConfig& config);
// Clusters the training embeddings and builds frozen model representations.
Representations build_experiment_representations(const RoutingDataset& train, const ExperimentConfig& config);
std::string resolve_strongest_model(const RoutingDataset& train, const ExperimentConfig& config);

struct RouterEvaluation {
  std::string name;
  SweepResult sweep;
  MetricsReport metrics;
};

struct AblationCell {
  std::string quality;
  std::string cost;
  std::optional<double> aiq;
  double perf_max = 0.0;
};

struct ExperimentResult {
  std::vector<std::string> pool;
  std::string strongest_model;
  RouterEvaluation router;
  RouterEvaluation oracle;
  std::vector<AblationCell> ablation;
  nlohmann::json report;
};

RouterEvaluation evaluate_router(std::string name, const PredictionMatrix& quality, const PredictionMatrix& cost,
                                 const RoutingDataset& test, const ExperimentConfig& config,
                                 const std::string& strongest);
RouterEvaluation evaluate_oracle(const RoutingDataset& test, const ExperimentConfig& config,
                                 const std::string& strongest);

// Full pipeline. Writes config.echo, reps.tsv, predictor-{quality,cost}.bin,
// trace.jsonl, report.{txt,json} and plot.tsv into config.output_dir. On
// failure a FAILED marker naming the stage is left behind.
ExperimentResult run_experiment(const ExperimentConfig& config);

std::vector<TraceEntry> load_trace(const std::filesystem::path& path);
void save_trace(std::span<const TraceEntry> trace, const std::filesystem::path& path);

// Recomputes the metrics from a trace file alone.
MetricsReport evaluate_trace(std::span<const TraceEntry> trace, const std::string& strongest_model,
                             bool absolute_sensitivity = false);

std::string format_report_table(const ExperimentResult& result, const ExperimentConfig& config);

}  // namespace costroute
