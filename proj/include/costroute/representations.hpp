#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "costroute/dataset.hpp"

namespace costroute {

struct ClusterModel {
  Matrix centroids;  // C x dim
  std::uint64_t seed = 0;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration

  [[nodiscard]] std::size_t num_clusters() const noexcept { return static_cast<std::size_t>(centroids.rows()); }
  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(centroids.cols()); }

  // Nearest centroid by Euclidean distance; ties go to the lowest index.
  [[nodiscard]] std::size_t assign(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  [[nodiscard]] std::vector<std::size_t> assign_all(const Matrix& points) const;
};

// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded with
// the point farthest from its current centroid.
ClusterModel kmeans(const Matrix& points, std::size_t clusters, std::uint64_t seed, std::size_t max_iters = 100);

// Picks the candidate with the largest second difference of inertia (discrete
// elbow). Ties resolve to the smaller cluster count.
std::size_t elbow_from_inertia(std::span<const std::size_t> candidates, std::span<const double> inertias);
std::size_t select_cluster_count(const Matrix& points, std::span<const std::size_t> candidates, std::uint64_t seed);

struct ModelRepresentation {
  std::string model;
  std::vector<double> values;        // mean sampled quality per cluster, in [0,1]
  std::vector<std::size_t> support;  // number of sampled prompts per cluster

  bool operator==(const ModelRepresentation&) const = default;
};

using Representations = std::vector<ModelRepresentation>;

Representations build_representations(const RoutingDataset& train, const ClusterModel& clusters,
                                      double sample_frac, std::uint64_t seed);

// K x C matrix with rows ordered like `pool`; throws if a model is missing.
Matrix representation_matrix(const Representations& reps, std::span<const std::string> pool);

void save_representations(const Representations& reps, const std::filesystem::path& path);
Representations load_representations(const std::filesystem::path& path);

}  // namespace costroute
