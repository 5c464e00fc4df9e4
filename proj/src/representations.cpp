#include "costroute/representations.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace costroute {

std::size_t ClusterModel::assign(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  return best;
}

std::vector<std::size_t> ClusterModel::assign_all(const Matrix& points) const {
  std::vector<std::size_t> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) out[static_cast<std::size_t>(i)] = assign(points.row(i));
  return out;
}

namespace {

std::size_t count_distinct_rows(const Matrix& points) {
  std::set<std::vector<double>> distinct;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    distinct.emplace(points.row(i).data(), points.row(i).data() + points.cols());
  }
  return distinct.size();
}

Matrix kmeanspp_init(const Matrix& points, std::size_t clusters, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  Matrix centroids(clusters, points.cols());
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  centroids.row(0) = points.row(static_cast<Eigen::Index>(first(rng)));

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (points.row(i) - centroids.row(0)).squaredNorm();

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 1; c < clusters; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t chosen = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
      // Rounding can land on an already-chosen point.
      if (d2[chosen] == 0.0) {
        chosen = static_cast<std::size_t>(std::ranges::max_element(d2) - d2.begin());
      }
    }
    centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(chosen));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points.row(i) - centroids.row(static_cast<Eigen::Index>(c))).squaredNorm());
    }
  }
  return centroids;
}

}  // namespace

ClusterModel kmeans(const Matrix& points, std::size_t clusters, std::uint64_t seed, std::size_t max_iters) {
  if (clusters < 1) throw std::invalid_argument("kmeans needs at least one cluster");
  const auto n = static_cast<std::size_t>(points.rows());
  if (n < clusters) throw std::invalid_argument(fmt::format("kmeans: {} points for {} clusters", n, clusters));
  if (count_distinct_rows(points) < clusters) {
    throw std::invalid_argument(fmt::format("kmeans: fewer than {} distinct points", clusters));
  }

  std::mt19937_64 rng(seed);
  ClusterModel model;
  model.seed = seed;
  model.centroids = kmeanspp_init(points, clusters, rng);

  std::vector<std::size_t> labels(n, std::numeric_limits<std::size_t>::max());
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = model.assign(points.row(static_cast<Eigen::Index>(i)));
      changed |= c != labels[i];
      labels[i] = c;
      dist[i] = (points.row(static_cast<Eigen::Index>(i)) - model.centroids.row(static_cast<Eigen::Index>(c)))
                    .squaredNorm();
      inertia += dist[i];
    }

    // Re-seed empty clusters with the farthest points.
    std::vector<std::size_t> counts(clusters, 0);
    for (auto c : labels) ++counts[c];
    for (std::size_t c = 0; c < clusters; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[labels[i]] > 1 && (far == n || dist[i] > dist[far])) far = i;
      }
      assert(far < n);
      --counts[labels[far]];
      inertia -= dist[far];
      labels[far] = c;
      dist[far] = 0.0;
      counts[c] = 1;
      model.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(far));
      changed = true;
    }

    model.inertia_history.push_back(inertia);
    model.inertia = inertia;
    model.iterations = it + 1;
    if (!changed) break;

    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(clusters), points.cols());
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(labels[i])) += points.row(static_cast<Eigen::Index>(i));
    }
    for (std::size_t c = 0; c < clusters; ++c) {
      model.centroids.row(static_cast<Eigen::Index>(c)) =
          sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
    }
  }

  // Final inertia against the final centroids.
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inertia += (points.row(static_cast<Eigen::Index>(i)) -
                model.centroids.row(static_cast<Eigen::Index>(model.assign(points.row(static_cast<Eigen::Index>(i))))))
                   .squaredNorm();
  }
  model.inertia = inertia;
  return model;
}

std::size_t elbow_from_inertia(std::span<const std::size_t> candidates, std::span<const double> inertias) {
  if (candidates.size() < 3) throw std::invalid_argument("elbow test needs at least 3 candidates");
  if (candidates.size() != inertias.size()) throw std::invalid_argument("candidate/inertia length mismatch");
  std::size_t best = 1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < candidates.size(); ++i) {
    const double score = (inertias[i - 1] - inertias[i]) - (inertias[i] - inertias[i + 1]);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return candidates[best];
}

std::size_t select_cluster_count(const Matrix& points, std::span<const std::size_t> candidates, std::uint64_t seed) {
  if (candidates.size() < 3) throw std::invalid_argument("elbow test needs at least 3 candidates");
  if (!std::ranges::is_sorted(candidates) || candidates.front() < 1) {
    throw std::invalid_argument("cluster candidates must be ascending and >= 1");
  }
  std::vector<double> inertias;
  for (auto c : candidates) inertias.push_back(kmeans(points, c, seed).inertia);
  return elbow_from_inertia(candidates, inertias);
}

Representations build_representations(const RoutingDataset& train, const ClusterModel& clusters, double sample_frac,
                                      std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("cannot build representations from an empty training set");
  if (!(sample_frac > 0.0 && sample_frac <= 1.0)) throw std::invalid_argument("sample_frac must be in (0, 1]");
  if (clusters.dim() != train.dim()) {
    throw std::invalid_argument(
        fmt::format("cluster model has dimension {}, training data {}", clusters.dim(), train.dim()));
  }
  const auto C = clusters.num_clusters();
  const auto K = train.num_models();
  const Matrix q = train.quality();
  const auto labels = clusters.assign_all(train.embeddings());

  std::vector<std::vector<std::size_t>> members(C);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);

  const Eigen::RowVectorXd global_mean = q.colwise().mean();
  Representations reps(K);
  for (std::size_t m = 0; m < K; ++m) {
    reps[m].model = train.pool()[m];
    reps[m].values.assign(C, global_mean[static_cast<Eigen::Index>(m)]);
    reps[m].support.assign(C, 0);
  }

  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < C; ++c) {
    auto& rows = members[c];
    if (rows.empty()) continue;
    const auto take = static_cast<std::size_t>(std::ceil(sample_frac * static_cast<double>(rows.size()) - 1e-12));
    std::shuffle(rows.begin(), rows.end(), rng);
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(K));
    for (std::size_t j = 0; j < take; ++j) sum += q.row(static_cast<Eigen::Index>(rows[j]));
    for (std::size_t m = 0; m < K; ++m) {
      reps[m].values[c] = sum[static_cast<Eigen::Index>(m)] / static_cast<double>(take);
      reps[m].support[c] = take;
    }
  }
  return reps;
}

Matrix representation_matrix(const Representations& reps, std::span<const std::string> pool) {
  if (reps.empty()) throw std::invalid_argument("no model representations");
  const auto C = reps.front().values.size();
  Matrix out(static_cast<Eigen::Index>(pool.size()), static_cast<Eigen::Index>(C));
  for (std::size_t m = 0; m < pool.size(); ++m) {
    auto it = std::ranges::find(reps, pool[m], &ModelRepresentation::model);
    if (it == reps.end()) throw std::invalid_argument(fmt::format("no representation for model '{}'", pool[m]));
    if (it->values.size() != C) throw std::invalid_argument("representations have inconsistent lengths");
    for (std::size_t c = 0; c < C; ++c) out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c)) = it->values[c];
  }
  return out;
}

// reps.tsv: "model<TAB>v1 v2 ... vC<TAB>s1 s2 ... sC", one model per line,
// with a leading '#' header.
void save_representations(const Representations& reps, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  out << "# model\tvalues\tsupport\n";
  for (const auto& r : reps) {
    out << r.model << '\t' << fmt::format("{}", fmt::join(r.values, " ")) << '\t'
        << fmt::format("{}", fmt::join(r.support, " ")) << '\n';
  }
}

Representations load_representations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open representations '{}'", path.string()));
  Representations reps;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::string name, values, support;
    if (!std::getline(row, name, '\t') || !std::getline(row, values, '\t') || !std::getline(row, support)) {
      throw std::runtime_error(fmt::format("malformed representation at line {}", line_no));
    }
    ModelRepresentation r{name, {}, {}};
    std::istringstream vs(values), ss(support);
    for (double v; vs >> v;) r.values.push_back(v);
    for (std::size_t s; ss >> s;) r.support.push_back(s);
    if (r.values.empty() || r.values.size() != r.support.size()) {
      throw std::runtime_error(fmt::format("malformed representation at line {}", line_no));
    }
    if (!reps.empty() && reps.front().values.size() != r.values.size()) {
      throw std::runtime_error(fmt::format("representation length mismatch at line {}", line_no));
    }
    for (double v : r.values) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::runtime_error(fmt::format("value outside [0,1] at line {}", line_no));
    }
    reps.push_back(std::move(r));
  }
  return reps;
}

}  // namespace costroute
