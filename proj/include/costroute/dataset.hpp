#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace costroute {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One query with ground-truth quality/cost for every model of the pool.
// `quality` and `cost` are indexed by pool position.
struct QueryRecord {
  std::string id;
  std::string group;
  std::vector<double> embedding;
  std::vector<double> quality;
  std::vector<double> cost;  // USD

  bool operator==(const QueryRecord&) const = default;
};

// Immutable after construction; the constructor enforces every record
// invariant (value ranges, shapes, finite numbers).
class RoutingDataset {
 public:
  RoutingDataset(std::vector<std::string> pool, std::size_t dim, std::vector<QueryRecord> records);

  [[nodiscard]] const std::vector<std::string>& pool() const noexcept { return pool_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }
  [[nodiscard]] bool empty() const noexcept { return records_.empty(); }
  [[nodiscard]] std::size_t num_models() const noexcept { return pool_.size(); }
  [[nodiscard]] const std::vector<QueryRecord>& records() const noexcept { return records_; }
  [[nodiscard]] const QueryRecord& operator[](std::size_t i) const { return records_[i]; }

  // Throws DatasetError for unknown names.
  [[nodiscard]] std::size_t model_index(std::string_view name) const;

  [[nodiscard]] Matrix embeddings() const;
  [[nodiscard]] Matrix quality() const;
  [[nodiscard]] Matrix costs() const;

  [[nodiscard]] RoutingDataset subset(std::span<const std::size_t> rows) const;
  // Keeps only the listed models, in the listed order.
  [[nodiscard]] RoutingDataset select_models(std::span<const std::string> names) const;

  bool operator==(const RoutingDataset&) const = default;

 private:
  std::vector<std::string> pool_;
  std::size_t dim_;
  std::vector<QueryRecord> records_;
};

// --- canonical line-record format ------------------------------------------

// Sidecar manifest path for a dataset file: "data.jsonl" -> "data.manifest.json".
std::filesystem::path manifest_path_for(const std::filesystem::path& dataset_path);

RoutingDataset load_dataset(const std::filesystem::path& path);
RoutingDataset load_dataset(const std::filesystem::path& path, const std::filesystem::path& manifest);
void save_dataset(const RoutingDataset& ds, const std::filesystem::path& path);

// --- splitting ---------------------------------------------------------------

struct SplitSpec {
  double train_frac = 0.75;
  double val_frac = 0.05;
  double test_frac = 0.20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitSizes {
  std::size_t train;
  std::size_t val;
  std::size_t test;
};

struct DatasetSplit {
  RoutingDataset train;
  RoutingDataset val;
  RoutingDataset test;
};

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec);
// Row indices of each part (seeded shuffle, then contiguous slices).
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const SplitSpec& spec);
DatasetSplit split(const RoutingDataset& ds, const SplitSpec& spec);

RoutingDataset normalize_embeddings(const RoutingDataset& ds);

// --- synthetic benchmark -----------------------------------------------------

struct SynthSpec {
  std::size_t n = 1000;
  std::size_t num_models = 5;
  std::size_t dim = 32;
  std::size_t clusters = 20;
  double noise = 0.1;           // std-dev of additive quality noise
  double cluster_spread = 0.35;  // std-dev of embedding noise around a center
  double cost_min = 1e-5;        // USD, cheapest base cost
  double cost_max = 1e-2;        // USD, most expensive base cost
  double cost_jitter = 0.1;      // scale of the multiplicative lognormal jitter

  void validate() const;
};

// Hidden generating parameters of a synthetic benchmark.
struct SynthLatent {
  Matrix centers;                  // clusters x dim, unit rows
  Matrix skill;                    // num_models x clusters, in [0,1]
  std::vector<double> base_cost;   // ascending in model index
};

SynthLatent synth_latent(const SynthSpec& spec, std::uint64_t seed);

// Pure function of (spec, seed). Record groups are "cluster-<g>".
RoutingDataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

}  // namespace costroute
