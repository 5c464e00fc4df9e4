#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "costroute/dataset.hpp"

namespace costroute {

enum class RewardFamily { linear_r1, exponential_r2 };

std::string_view to_string(RewardFamily f);
// Accepts "r1"/"linear_r1" and "r2"/"exponential_r2".
RewardFamily parse_reward_family(std::string_view s);

// Willingness-to-pay lambda trades quality against USD cost. Larger lambda
// discounts cost.
struct RewardSpec {
  RewardFamily family = RewardFamily::exponential_r2;
  double lambda = 1.0;

  void validate() const;
};

// R1 = s - c / lambda;  R2 = s * exp(-c / lambda)
double reward(double s, double c, const RewardSpec& spec);

struct RoutingDecision {
  std::string query_id;
  std::size_t model = 0;
  std::string model_name;
  std::vector<double> rewards;
  double quality = 0.0;  // predicted (or true, for the oracle) quality of the chosen model
  double cost = 0.0;
};

// argmax of the reward; exact ties go to the lower cost, then the lower index.
RoutingDecision route(std::span<const double> quality, std::span<const double> cost, const RewardSpec& spec);

// `route` over the record's ground truth.
RoutingDecision oracle_route(const QueryRecord& record, std::span<const std::string> pool, const RewardSpec& spec);

// One routed query inside a sweep. Serialized as one JSON line.
struct TraceEntry {
  std::string query_id;
  double lambda = 0.0;
  RewardFamily family = RewardFamily::exponential_r2;
  std::size_t model = 0;
  std::string model_name;
  std::size_t pool_size = 0;
  double predicted_quality = 0.0;
  double predicted_cost = 0.0;
  double realized_quality = 0.0;
  double realized_cost = 0.0;

  bool operator==(const TraceEntry&) const = default;
};

nlohmann::json to_json(const TraceEntry& e);
TraceEntry trace_entry_from_json(const nlohmann::json& j);

}  // namespace costroute
