#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "costroute/dataset.hpp"
#include "costroute/nn.hpp"
#include "costroute/representations.hpp"
#include "costroute/training.hpp"

namespace costroute {

enum class Architecture { attention, regression, fcn2, fcn3, regression_emb, fcn2_emb, fcn3_emb, knn };
enum class Target { quality, cost };

std::string_view to_string(Architecture a);
std::string_view to_string(Target t);
Architecture parse_architecture(std::string_view s);
Target parse_target(std::string_view s);

// True for architectures whose inputs include model representations.
bool uses_representations(Architecture a);

struct PredictorConfig {
  Architecture architecture = Architecture::attention;
  Target target = Target::quality;
  std::size_t internal_dim = 20;
  std::vector<std::size_t> hidden_dims;  // empty: architecture default
  double learning_rate = 1e-3;
  std::size_t batch_size = 1024;
  double weight_decay = 1e-5;
  std::size_t epochs = 1000;
  std::uint64_t seed = 0;
  std::size_t k = 20;

  // Quality: lr 1e-3, weight decay 1e-5. Cost: lr 1e-4, weight decay 1e-7.
  static PredictorConfig defaults(Architecture a, Target t);
  [[nodiscard]] std::vector<std::size_t> resolved_hidden_dims() const;
  void validate() const;

  bool operator==(const PredictorConfig&) const = default;
};

struct PredictionMatrix {
  Matrix values;  // n x K
  Target target = Target::quality;
};

class Predictor;

Predictor train(const RoutingDataset& train_set, const RoutingDataset& val_set, const Representations& reps,
                const PredictorConfig& config);
// Linear map from embeddings (plus intercept) to every model's target. Output
// is clamped into the target's range at prediction time.
Predictor fit_regression(const RoutingDataset& train_set, Target target);
Predictor make_knn(const RoutingDataset& train_set, Target target, std::size_t k);
// Wraps explicit parameters (used by deserialization and tests).
Predictor make_network_predictor(PredictorConfig config, std::vector<std::string> pool, std::size_t query_dim,
                                 std::size_t rep_dim, Vector params);
void save_predictor(const Predictor& predictor, const std::filesystem::path& path);
Predictor load_predictor(const std::filesystem::path& path, std::optional<Architecture> expected = std::nullopt);

class Predictor {
 public:
  [[nodiscard]] const PredictorConfig& config() const noexcept { return config_; }
  [[nodiscard]] const std::vector<std::string>& pool() const noexcept { return pool_; }
  [[nodiscard]] std::size_t query_dim() const noexcept { return query_dim_; }
  [[nodiscard]] std::size_t rep_dim() const noexcept { return rep_dim_; }
  [[nodiscard]] const TrainingHistory& history() const noexcept { return history_; }
  [[nodiscard]] const Vector& params() const noexcept { return params_; }
  [[nodiscard]] const Network* network() const noexcept { return net_.get(); }

  // queries: B x query_dim. reps: K x rep_dim, ordered like the caller's pool;
  // ignored by architectures without representation inputs.
  [[nodiscard]] Matrix predict(const Matrix& queries, const Matrix& reps) const;

  friend Predictor train(const RoutingDataset&, const RoutingDataset&, const Representations&,
                         const PredictorConfig&);
  friend Predictor fit_regression(const RoutingDataset&, Target);
  friend Predictor make_knn(const RoutingDataset&, Target, std::size_t);
  friend Predictor make_network_predictor(PredictorConfig, std::vector<std::string>, std::size_t, std::size_t,
                                          Vector);
  friend Predictor load_predictor(const std::filesystem::path&, std::optional<Architecture>);
  friend void save_predictor(const Predictor&, const std::filesystem::path&);

 private:
  PredictorConfig config_;
  std::vector<std::string> pool_;
  std::size_t query_dim_ = 0;
  std::size_t rep_dim_ = 0;
  std::shared_ptr<const Network> net_;
  Vector params_;
  Matrix knn_points_;   // knn only: training embeddings
  Matrix knn_targets_;  // knn only: training targets
  TrainingHistory history_;
};

// Builds the network shape for a config (not for regression/knn).
std::shared_ptr<const Network> make_network(const PredictorConfig& config, std::size_t query_dim,
                                             std::size_t rep_dim, std::size_t num_models);

// Closed-form ridge: (Q^T Q + eps I) X = Q^T T.
Matrix solve_least_squares(const Matrix& inputs, const Matrix& targets, double ridge = 1e-8, bool intercept = true);
// Mean target over the k nearest training embeddings (ties by record order).
Eigen::RowVectorXd knn_predict(const Matrix& points, const Matrix& targets,
                               const Eigen::Ref<const Eigen::RowVectorXd>& query, std::size_t k);
Eigen::RowVectorXd knn_predict(const RoutingDataset& train_set, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                               std::size_t k);

// Row i = predictions for record i of `ds`. Throws naming the query on a
// non-finite output.
PredictionMatrix predict_matrix(const Predictor& predictor, const RoutingDataset& ds, const Representations& reps);

}  // namespace costroute
