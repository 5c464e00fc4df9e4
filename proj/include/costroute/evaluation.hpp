#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "costroute/dataset.hpp"
#include "costroute/predictors.hpp"
#include "costroute/routing.hpp"

namespace costroute {

// Average realized outcome of routing the whole test set at one lambda.
struct SweepPoint {
  double lambda = 0.0;
  double avg_cost = 0.0;  // USD per query
  double avg_perf = 0.0;
  std::vector<double> calls;  // fraction of queries sent to each model

  bool operator==(const SweepPoint&) const = default;
};

// Routing policy applied to row `row` of the evaluated dataset.
using RoutingPolicy = std::function<RoutingDecision(std::size_t row, const RewardSpec&)>;

RoutingPolicy predicted_policy(const PredictionMatrix& quality, const PredictionMatrix& cost);
RoutingPolicy oracle_policy(const RoutingDataset& ds);

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<TraceEntry> trace;  // lambda-major, dataset order within a lambda
};

// 16 log-spaced values from 1e-4 to 1e2 by default.
std::vector<double> log_lambda_grid(std::size_t count = 16, double lo = 1e-4, double hi = 1e2);

// Realized quality/cost always come from the dataset's ground truth.
SweepResult sweep(const RoutingPolicy& policy, const RoutingDataset& test, std::span<const double> lambdas,
                  RewardFamily family);

// Aggregates a trace back into sweep points; `sweep` uses this too, so the two
// agree bit for bit.
std::vector<SweepPoint> points_from_trace(std::span<const TraceEntry> trace);

struct CostPerf {
  double cost = 0.0;
  double perf = 0.0;

  bool operator==(const CostPerf&) const = default;
};

// Non-decreasing upper concave envelope of a point cloud.
struct ParetoCurve {
  std::vector<CostPerf> hull;  // strictly increasing in cost and perf
  double a = 0.0;              // min input cost
  double b = 0.0;              // max input cost

  // Envelope value at `cost` (flat beyond the last vertex).
  [[nodiscard]] double value_at(double cost) const;
};

// Same-cost points keep the best perf; dominated points are dropped; the rest
// go through a monotone-chain upper hull. Throws if all costs are equal.
ParetoCurve pareto_hull(std::span<const CostPerf> points);

// Area under the envelope over [a, b], divided by (b - a).
double aiq(const ParetoCurve& curve);

enum class SensitivityAxis { perf, cost };

// sum_j log(l_{j+1}/l_j) (v_{j+1} - v_j) / log(l_last / l_first).
// `absolute` uses |v_{j+1} - v_j| instead of the signed difference.
double lambda_sensitivity(std::span<const SweepPoint> sweep, SensitivityAxis axis, bool absolute = false);

struct MetricsReport {
  std::optional<double> aiq;  // empty when every sweep point has the same cost
  double perf_max = 0.0;
  double sens_perf = 0.0;
  double sens_cost = 0.0;
  double max_calls = 0.0;  // max over lambda of the share sent to the strongest model
  ParetoCurve curve;
};

MetricsReport metrics_report(std::span<const SweepPoint> sweep, std::span<const std::string> pool,
                             const std::string& strongest_model, bool absolute_sensitivity = false);

nlohmann::json to_json(const SweepPoint& p);
nlohmann::json to_json(const MetricsReport& m);

}  // namespace costroute
