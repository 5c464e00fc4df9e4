#include "costroute/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

namespace costroute {

RoutingPolicy predicted_policy(const PredictionMatrix& quality, const PredictionMatrix& cost) {
  if (quality.values.rows() != cost.values.rows() || quality.values.cols() != cost.values.cols()) {
    throw std::invalid_argument("quality and cost prediction matrices differ in shape");
  }
  return [s = quality.values, c = cost.values](std::size_t row, const RewardSpec& spec) {
    const auto r = static_cast<Eigen::Index>(row);
    const Eigen::RowVectorXd sr = s.row(r);
    const Eigen::RowVectorXd cr = c.row(r);
    return route({sr.data(), static_cast<std::size_t>(sr.size())}, {cr.data(), static_cast<std::size_t>(cr.size())},
                 spec);
  };
}

RoutingPolicy oracle_policy(const RoutingDataset& ds) {
  return [s = ds.quality(), c = ds.costs()](std::size_t row, const RewardSpec& spec) {
    const auto r = static_cast<Eigen::Index>(row);
    const Eigen::RowVectorXd sr = s.row(r);
    const Eigen::RowVectorXd cr = c.row(r);
    return route({sr.data(), static_cast<std::size_t>(sr.size())}, {cr.data(), static_cast<std::size_t>(cr.size())},
                 spec);
  };
}

std::vector<double> log_lambda_grid(std::size_t count, double lo, double hi) {
  if (count < 2 || !(lo > 0.0) || !(hi > lo)) throw std::invalid_argument("invalid lambda grid");
  std::vector<double> grid(count);
  const double l0 = std::log10(lo);
  const double l1 = std::log10(hi);
  for (std::size_t j = 0; j < count; ++j) {
    grid[j] = std::pow(10.0, l0 + (l1 - l0) * static_cast<double>(j) / static_cast<double>(count - 1));
  }
  return grid;
}

SweepResult sweep(const RoutingPolicy& policy, const RoutingDataset& test, std::span<const double> lambdas,
                  RewardFamily family) {
  if (test.empty()) throw std::invalid_argument("sweep needs a non-empty test set");
  if (lambdas.empty()) throw std::invalid_argument("sweep needs at least one lambda");
  for (std::size_t j = 0; j < lambdas.size(); ++j) {
    RewardSpec{family, lambdas[j]}.validate();
    if (j > 0 && !(lambdas[j] > lambdas[j - 1])) throw std::invalid_argument("lambdas must be strictly ascending");
  }

  SweepResult out;
  out.trace.reserve(lambdas.size() * test.size());
  for (double lambda : lambdas) {
    const RewardSpec spec{family, lambda};
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto d = policy(i, spec);
      const auto& rec = test[i];
      if (d.model >= test.num_models()) throw std::out_of_range("policy chose a model outside the pool");
      out.trace.push_back(TraceEntry{rec.id, lambda, family, d.model, test.pool()[d.model], test.num_models(),
                                     d.quality, d.cost, rec.quality[d.model], rec.cost[d.model]});
    }
  }
  out.points = points_from_trace(out.trace);
  return out;
}

std::vector<SweepPoint> points_from_trace(std::span<const TraceEntry> trace) {
  std::vector<SweepPoint> points;
  std::vector<std::size_t> counts;
  for (const auto& e : trace) {
    if (points.empty() || points.back().lambda != e.lambda) {
      points.push_back(SweepPoint{e.lambda, 0.0, 0.0, std::vector<double>(e.pool_size, 0.0)});
      counts.push_back(0);
    }
    auto& p = points.back();
    if (p.calls.size() != e.pool_size) throw std::invalid_argument("trace mixes pool sizes within one lambda");
    p.avg_cost += e.realized_cost;
    p.avg_perf += e.realized_quality;
    p.calls[e.model] += 1.0;
    ++counts.back();
  }
  for (std::size_t j = 0; j < points.size(); ++j) {
    const double n = static_cast<double>(counts[j]);
    points[j].avg_cost /= n;
    points[j].avg_perf /= n;
    for (auto& c : points[j].calls) c /= n;
  }
  return points;
}

double ParetoCurve::value_at(double cost) const {
  if (hull.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (cost <= hull.front().cost) return hull.front().perf;
  for (std::size_t i = 1; i < hull.size(); ++i) {
    if (cost <= hull[i].cost) {
      const auto& l = hull[i - 1];
      const auto& r = hull[i];
      return l.perf + (r.perf - l.perf) * (cost - l.cost) / (r.cost - l.cost);
    }
  }
  return hull.back().perf;
}

ParetoCurve pareto_hull(std::span<const CostPerf> points) {
  if (points.size() < 2) throw std::invalid_argument("pareto hull needs at least two points");
  std::vector<CostPerf> pts(points.begin(), points.end());
  for (const auto& p : pts) {
    if (!std::isfinite(p.cost) || !std::isfinite(p.perf)) throw std::invalid_argument("non-finite hull input");
  }
  std::ranges::sort(pts, [](const CostPerf& l, const CostPerf& r) {
    return l.cost != r.cost ? l.cost < r.cost : l.perf > r.perf;
  });

  ParetoCurve curve;
  curve.a = pts.front().cost;
  curve.b = pts.back().cost;
  if (!(curve.b > curve.a)) throw std::invalid_argument("all points share one cost; the cost range is empty");

  // First point per cost is the best one there; keep only strict perf gains.
  std::vector<CostPerf> frontier;
  for (const auto& p : pts) {
    if (frontier.empty() || (p.cost != frontier.back().cost && p.perf > frontier.back().perf)) frontier.push_back(p);
  }

  auto cross = [](const CostPerf& o, const CostPerf& a, const CostPerf& b) {
    return (a.cost - o.cost) * (b.perf - o.perf) - (a.perf - o.perf) * (b.cost - o.cost);
  };
  for (const auto& p : frontier) {
    while (curve.hull.size() >= 2 && cross(curve.hull[curve.hull.size() - 2], curve.hull.back(), p) >= 0.0) {
      curve.hull.pop_back();
    }
    curve.hull.push_back(p);
  }
  return curve;
}

double aiq(const ParetoCurve& curve) {
  if (!(curve.b > curve.a)) throw std::invalid_argument("AIQ is undefined for an empty cost range");
  if (curve.hull.empty()) throw std::invalid_argument("AIQ needs a non-empty hull");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.hull.size(); ++i) {
    const auto& l = curve.hull[i - 1];
    const auto& r = curve.hull[i];
    area += 0.5 * (l.perf + r.perf) * (r.cost - l.cost);
  }
  area += curve.hull.back().perf * (curve.b - curve.hull.back().cost);
  return area / (curve.b - curve.a);
}

double lambda_sensitivity(std::span<const SweepPoint> sweep, SensitivityAxis axis, bool absolute) {
  if (sweep.size() < 3) throw std::invalid_argument("lambda sensitivity needs at least three sweep points");
  for (std::size_t j = 1; j < sweep.size(); ++j) {
    if (!(sweep[j].lambda > sweep[j - 1].lambda)) {
      throw std::invalid_argument("lambda sensitivity needs strictly increasing lambdas");
    }
  }
  auto value = [axis](const SweepPoint& p) { return axis == SensitivityAxis::perf ? p.avg_perf : p.avg_cost; };
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < sweep.size(); ++j) {
    double delta = value(sweep[j + 1]) - value(sweep[j]);
    if (absolute) delta = std::abs(delta);
    total += std::log(sweep[j + 1].lambda / sweep[j].lambda) * delta;
  }
  return total / std::log(sweep.back().lambda / sweep.front().lambda);
}

MetricsReport metrics_report(std::span<const SweepPoint> sweep, std::span<const std::string> pool,
                             const std::string& strongest_model, bool absolute_sensitivity) {
  if (sweep.empty()) throw std::invalid_argument("metrics need a non-empty sweep");
  auto it = std::ranges::find(pool, strongest_model);
  if (it == pool.end()) throw std::invalid_argument(fmt::format("strongest model '{}' not in pool", strongest_model));
  const auto strongest = static_cast<std::size_t>(it - pool.begin());

  MetricsReport m;
  std::vector<CostPerf> pts;
  for (const auto& p : sweep) {
    if (p.calls.size() != pool.size()) throw std::invalid_argument("sweep call vector does not match the pool");
    pts.push_back({p.avg_cost, p.avg_perf});
    m.perf_max = pts.size() == 1 ? p.avg_perf : std::max(m.perf_max, p.avg_perf);
    m.max_calls = std::max(m.max_calls, p.calls[strongest]);
  }
  const bool spread = std::ranges::any_of(pts, [&](const CostPerf& p) { return p.cost != pts.front().cost; });
  if (spread) {
    m.curve = pareto_hull(pts);
    m.aiq = aiq(m.curve);
  }
  m.sens_perf = lambda_sensitivity(sweep, SensitivityAxis::perf, absolute_sensitivity);
  m.sens_cost = lambda_sensitivity(sweep, SensitivityAxis::cost, absolute_sensitivity);
  return m;
}

nlohmann::json to_json(const SweepPoint& p) {
  return nlohmann::json{{"lambda", p.lambda}, {"avg_cost", p.avg_cost}, {"avg_perf", p.avg_perf}, {"calls", p.calls}};
}

nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json hull = nlohmann::json::array();
  for (const auto& v : m.curve.hull) hull.push_back({v.cost, v.perf});
  return nlohmann::json{{"aiq", m.aiq ? nlohmann::json(*m.aiq) : nlohmann::json(nullptr)},
                        {"perf_max", m.perf_max},
                        {"sens_perf", m.sens_perf},
                        {"sens_cost", m.sens_cost},
                        {"max_calls", m.max_calls},
                        {"hull", hull},
                        {"cost_range", {m.curve.a, m.curve.b}}};
}

}  // namespace costroute
