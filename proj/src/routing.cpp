#include "costroute/routing.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace costroute {

std::string_view to_string(RewardFamily f) { return f == RewardFamily::linear_r1 ? "r1" : "r2"; }

RewardFamily parse_reward_family(std::string_view s) {
  if (s == "r1" || s == "linear_r1") return RewardFamily::linear_r1;
  if (s == "r2" || s == "exponential_r2") return RewardFamily::exponential_r2;
  throw std::invalid_argument(fmt::format("unknown reward family '{}' (expected r1 or r2)", s));
}

void RewardSpec::validate() const {
  if (!std::isfinite(lambda) || !(lambda > 0.0)) {
    throw std::invalid_argument(fmt::format("lambda must be finite and positive, got {}", lambda));
  }
}

double reward(double s, double c, const RewardSpec& spec) {
  switch (spec.family) {
    case RewardFamily::linear_r1: return s - c / spec.lambda;
    case RewardFamily::exponential_r2: return s * std::exp(-c / spec.lambda);
  }
  return 0.0;
}

RoutingDecision route(std::span<const double> quality, std::span<const double> cost, const RewardSpec& spec) {
  spec.validate();
  if (quality.empty() || quality.size() != cost.size()) {
    throw std::invalid_argument("route needs equally sized, non-empty quality and cost vectors");
  }
  RoutingDecision d;
  d.rewards.resize(quality.size());
  for (std::size_t i = 0; i < quality.size(); ++i) {
    d.rewards[i] = reward(quality[i], cost[i], spec);
    if (i == 0) continue;
    const double best = d.rewards[d.model];
    if (d.rewards[i] > best || (d.rewards[i] == best && cost[i] < cost[d.model])) d.model = i;
  }
  d.quality = quality[d.model];
  d.cost = cost[d.model];
  return d;
}

RoutingDecision oracle_route(const QueryRecord& record, std::span<const std::string> pool, const RewardSpec& spec) {
  auto d = route(record.quality, record.cost, spec);
  d.query_id = record.id;
  if (d.model < pool.size()) d.model_name = pool[d.model];
  return d;
}

nlohmann::json to_json(const TraceEntry& e) {
  return nlohmann::json{{"query_id", e.query_id},
                        {"lambda", e.lambda},
                        {"family", to_string(e.family)},
                        {"model", e.model},
                        {"model_name", e.model_name},
                        {"pool_size", e.pool_size},
                        {"predicted_quality", e.predicted_quality},
                        {"predicted_cost", e.predicted_cost},
                        {"realized_quality", e.realized_quality},
                        {"realized_cost", e.realized_cost}};
}

TraceEntry trace_entry_from_json(const nlohmann::json& j) {
  TraceEntry e;
  e.query_id = j.at("query_id").get<std::string>();
  e.lambda = j.at("lambda").get<double>();
  e.family = parse_reward_family(j.at("family").get<std::string>());
  e.model = j.at("model").get<std::size_t>();
  e.model_name = j.at("model_name").get<std::string>();
  e.pool_size = j.at("pool_size").get<std::size_t>();
  e.predicted_quality = j.at("predicted_quality").get<double>();
  e.predicted_cost = j.at("predicted_cost").get<double>();
  e.realized_quality = j.at("realized_quality").get<double>();
  e.realized_cost = j.at("realized_cost").get<double>();
  if (e.model >= e.pool_size) throw std::invalid_argument("trace entry model index exceeds pool size");
  return e;
}

}  // namespace costroute
