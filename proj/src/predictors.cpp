#include "costroute/predictors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <utility>

#include <Eigen/Cholesky>
#include <fmt/format.h>
#include <json.hpp>

#include "costroute/config_json.hpp"

namespace costroute {

using nlohmann::json;
using Eigen::Index;

namespace {

constexpr std::array<std::pair<Architecture, std::string_view>, 8> kArchNames{{
    {Architecture::attention, "attention"},
    {Architecture::regression, "regression"},
    {Architecture::fcn2, "fcn2"},
    {Architecture::fcn3, "fcn3"},
    {Architecture::regression_emb, "regression_emb"},
    {Architecture::fcn2_emb, "fcn2_emb"},
    {Architecture::fcn3_emb, "fcn3_emb"},
    {Architecture::knn, "knn"},
}};

Head head_for(Target t) { return t == Target::quality ? Head::logistic : Head::softplus; }

Matrix targets_of(const RoutingDataset& ds, Target t) { return t == Target::quality ? ds.quality() : ds.costs(); }

void clamp_to_target(Matrix& m, Target t) {
  if (t == Target::quality) {
    m = m.cwiseMax(0.0).cwiseMin(1.0);
  } else {
    m = m.cwiseMax(0.0);
  }
}

}  // namespace

std::string_view to_string(Architecture a) {
  for (const auto& [arch, name] : kArchNames) {
    if (arch == a) return name;
  }
  return "unknown";
}

std::string_view to_string(Target t) { return t == Target::quality ? "quality" : "cost"; }

Architecture parse_architecture(std::string_view s) {
  for (const auto& [arch, name] : kArchNames) {
    if (name == s) return arch;
  }
  throw std::invalid_argument(fmt::format("unknown architecture '{}'", s));
}

Target parse_target(std::string_view s) {
  if (s == "quality") return Target::quality;
  if (s == "cost") return Target::cost;
  throw std::invalid_argument(fmt::format("unknown target '{}'", s));
}

bool uses_representations(Architecture a) {
  switch (a) {
    case Architecture::attention:
    case Architecture::regression_emb:
    case Architecture::fcn2_emb:
    case Architecture::fcn3_emb: return true;
    default: return false;
  }
}

PredictorConfig PredictorConfig::defaults(Architecture a, Target t) {
  PredictorConfig c;
  c.architecture = a;
  c.target = t;
  if (t == Target::cost) {
    c.learning_rate = 1e-4;
    c.weight_decay = 1e-7;
  }
  return c;
}

std::vector<std::size_t> PredictorConfig::resolved_hidden_dims() const {
  if (!hidden_dims.empty()) return hidden_dims;
  switch (architecture) {
    case Architecture::fcn2:
    case Architecture::fcn2_emb: return {256};
    case Architecture::fcn3:
    case Architecture::fcn3_emb: return {256, 64};
    default: return {};
  }
}

void PredictorConfig::validate() const {
  if (internal_dim == 0) throw std::invalid_argument("internal_dim must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (architecture == Architecture::knn && k == 0) throw std::invalid_argument("knn needs k >= 1");
  for (auto h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("hidden widths must be positive");
  }
  const bool has_hidden = architecture == Architecture::fcn2 || architecture == Architecture::fcn3 ||
                          architecture == Architecture::fcn2_emb || architecture == Architecture::fcn3_emb;
  if (!hidden_dims.empty() && !has_hidden) {
    throw std::invalid_argument(fmt::format("architecture {} takes no hidden layers", to_string(architecture)));
  }
  const std::size_t expected_depth =
      (architecture == Architecture::fcn3 || architecture == Architecture::fcn3_emb) ? 2 : 1;
  if (!hidden_dims.empty() && hidden_dims.size() != expected_depth) {
    throw std::invalid_argument(
        fmt::format("{} expects {} hidden widths", to_string(architecture), expected_depth));
  }
}

std::shared_ptr<const Network> make_network(const PredictorConfig& config, std::size_t query_dim,
                                             std::size_t rep_dim, std::size_t num_models) {
  const Head head = head_for(config.target);
  switch (config.architecture) {
    case Architecture::attention:
      return std::make_shared<AttentionNetwork>(query_dim, rep_dim, config.internal_dim, head);
    case Architecture::fcn2:
    case Architecture::fcn3:
      return std::make_shared<MlpNetwork>(query_dim, config.resolved_hidden_dims(), num_models, head);
    case Architecture::regression_emb:
    case Architecture::fcn2_emb:
    case Architecture::fcn3_emb:
      return std::make_shared<PairMlpNetwork>(query_dim, rep_dim, config.resolved_hidden_dims(), head);
    case Architecture::regression:
      return std::make_shared<MlpNetwork>(query_dim, std::vector<std::size_t>{}, num_models, Head::identity);
    case Architecture::knn: break;
  }
  throw std::invalid_argument(fmt::format("{} has no network form", to_string(config.architecture)));
}

Predictor make_network_predictor(PredictorConfig config, std::vector<std::string> pool, std::size_t query_dim,
                                 std::size_t rep_dim, Vector params) {
  Predictor p;
  p.net_ = make_network(config, query_dim, rep_dim, pool.size());
  if (static_cast<std::size_t>(params.size()) != p.net_->num_params()) {
    throw std::invalid_argument(fmt::format("{} predictor expects {} parameters, got {}",
                                            to_string(config.architecture), p.net_->num_params(), params.size()));
  }
  p.config_ = std::move(config);
  p.pool_ = std::move(pool);
  p.query_dim_ = query_dim;
  p.rep_dim_ = rep_dim;
  p.params_ = std::move(params);
  return p;
}

Matrix Predictor::predict(const Matrix& queries, const Matrix& reps) const {
  if (static_cast<std::size_t>(queries.cols()) != query_dim_) {
    throw std::invalid_argument(
        fmt::format("query dimension {} does not match predictor dimension {}", queries.cols(), query_dim_));
  }
  if (config_.architecture == Architecture::knn) {
    Matrix out(queries.rows(), knn_targets_.cols());
    for (Index i = 0; i < queries.rows(); ++i) {
      out.row(i) = knn_predict(knn_points_, knn_targets_, queries.row(i), config_.k);
    }
    return out;
  }
  if (uses_representations(config_.architecture) && static_cast<std::size_t>(reps.cols()) != rep_dim_) {
    throw std::invalid_argument(
        fmt::format("representation length {} does not match predictor length {}", reps.cols(), rep_dim_));
  }
  Matrix out = net_->forward(params_, queries, reps);
  if (config_.architecture == Architecture::regression) clamp_to_target(out, config_.target);
  return out;
}

Predictor train(const RoutingDataset& train_set, const RoutingDataset& val_set, const Representations& reps,
                const PredictorConfig& config) {
  config.validate();
  if (train_set.empty()) throw TrainingError("empty training set");
  if (config.architecture == Architecture::regression) {
    Predictor p = fit_regression(train_set, config.target);
    p.config_ = config;
    return p;
  }
  if (config.architecture == Architecture::knn) {
    Predictor p = make_knn(train_set, config.target, config.k);
    p.config_ = config;
    return p;
  }

  Matrix rep_matrix;
  std::size_t rep_dim = 0;
  if (uses_representations(config.architecture)) {
    rep_matrix = representation_matrix(reps, train_set.pool());
    rep_dim = static_cast<std::size_t>(rep_matrix.cols());
  }

  Predictor p;
  p.config_ = config;
  p.pool_ = train_set.pool();
  p.query_dim_ = train_set.dim();
  p.rep_dim_ = rep_dim;
  p.net_ = make_network(config, p.query_dim_, rep_dim, train_set.num_models());

  std::mt19937_64 init_rng(config.seed);
  p.params_ = p.net_->initial_params(init_rng);
  const Matrix y = targets_of(train_set, config.target);
  if (config.target == Target::cost) p.net_->set_output_bias(p.params_, inverse_head(Head::softplus, y.mean()));

  Matrix val_x(0, static_cast<Index>(train_set.dim()));
  Matrix val_y(0, static_cast<Index>(train_set.num_models()));
  if (!val_set.empty()) {
    if (val_set.pool() != train_set.pool()) throw TrainingError("validation pool differs from training pool");
    val_x = val_set.embeddings();
    val_y = targets_of(val_set, config.target);
  }
  const TrainOptions opts{config.learning_rate, config.batch_size, config.weight_decay, config.epochs,
                          config.seed ^ 0x5851f42d4c957f2dULL};
  p.history_ = fit_network(*p.net_, p.params_, train_set.embeddings(), y, val_x, val_y, rep_matrix, opts);
  return p;
}

Matrix solve_least_squares(const Matrix& inputs, const Matrix& targets, double ridge, bool intercept) {
  if (inputs.rows() == 0) throw std::invalid_argument("least squares needs at least one row");
  if (inputs.rows() != targets.rows()) throw std::invalid_argument("inputs and targets differ in length");
  Matrix a = inputs;
  if (intercept) {
    a.conservativeResize(Eigen::NoChange, inputs.cols() + 1);
    a.col(inputs.cols()).setOnes();
  }
  Eigen::MatrixXd gram = a.transpose() * a;
  gram.diagonal().array() += ridge;
  const Eigen::MatrixXd rhs = a.transpose() * targets;
  Matrix x = gram.ldlt().solve(rhs);
  if (!x.allFinite()) throw std::runtime_error("least-squares solve produced non-finite coefficients");
  return x;
}

Predictor fit_regression(const RoutingDataset& train_set, Target target) {
  if (train_set.empty()) throw TrainingError("empty training set");
  const Matrix coef = solve_least_squares(train_set.embeddings(), targets_of(train_set, target));
  // (dim + 1) x K row-major is exactly the affine layer's [W ; b] layout.
  Vector params = Eigen::Map<const Vector>(coef.data(), coef.size());
  return make_network_predictor(PredictorConfig::defaults(Architecture::regression, target), train_set.pool(),
                                train_set.dim(), 0, std::move(params));
}

Predictor make_knn(const RoutingDataset& train_set, Target target, std::size_t k) {
  if (train_set.empty()) throw std::invalid_argument("knn needs a non-empty training set");
  if (k == 0 || k > train_set.size()) {
    throw std::invalid_argument(fmt::format("knn: k={} must be in [1, {}]", k, train_set.size()));
  }
  Predictor p;
  p.config_ = PredictorConfig::defaults(Architecture::knn, target);
  p.config_.k = k;
  p.pool_ = train_set.pool();
  p.query_dim_ = train_set.dim();
  p.knn_points_ = train_set.embeddings();
  p.knn_targets_ = targets_of(train_set, target);
  return p;
}

Eigen::RowVectorXd knn_predict(const Matrix& points, const Matrix& targets,
                               const Eigen::Ref<const Eigen::RowVectorXd>& query, std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n == 0) throw std::invalid_argument("knn needs a non-empty training set");
  if (k == 0 || k > n) throw std::invalid_argument(fmt::format("knn: k={} must be in [1, {}]", k, n));
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = {(points.row(static_cast<Index>(i)) - query).squaredNorm(), i};
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(targets.cols());
  for (std::size_t j = 0; j < k; ++j) sum += targets.row(static_cast<Index>(dist[j].second));
  return sum / static_cast<double>(k);
}

Eigen::RowVectorXd knn_predict(const RoutingDataset& train_set, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                               std::size_t k) {
  return knn_predict(train_set.embeddings(), train_set.quality(), query, k);
}

PredictionMatrix predict_matrix(const Predictor& predictor, const RoutingDataset& ds, const Representations& reps) {
  const auto arch = predictor.config().architecture;
  Matrix rep_matrix;
  if (uses_representations(arch)) {
    rep_matrix = representation_matrix(reps, ds.pool());
  } else if (predictor.pool() != ds.pool()) {
    throw std::invalid_argument(fmt::format("{} predictor was trained on a different model pool", to_string(arch)));
  }
  PredictionMatrix out{predictor.predict(ds.embeddings(), rep_matrix), predictor.config().target};
  for (Index i = 0; i < out.values.rows(); ++i) {
    if (!out.values.row(i).allFinite()) {
      throw std::runtime_error(fmt::format("non-finite prediction for query '{}'", ds[static_cast<std::size_t>(i)].id));
    }
  }
  return out;
}

// --- artifact ----------------------------------------------------------------
//
// Layout: 8-byte magic, u64 header length, JSON header, then each array listed
// in the header as row-major native doubles.

namespace {

constexpr std::array<char, 8> kMagic{'C', 'R', 'P', 'R', 'E', 'D', '0', '1'};
constexpr int kFormatVersion = 1;

void write_array(std::ofstream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

Matrix read_array(std::ifstream& in, std::size_t rows, std::size_t cols) {
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
  if (!in) throw std::runtime_error("predictor artifact is truncated");
  return m;
}

}  // namespace

void save_predictor(const Predictor& p, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  json header{{"format_version", kFormatVersion},
              {"architecture", to_string(p.config_.architecture)},
              {"target", to_string(p.config_.target)},
              {"config", to_json(p.config_)},
              {"pool", p.pool_},
              {"query_dim", p.query_dim_},
              {"rep_dim", p.rep_dim_}};
  if (p.config_.architecture == Architecture::knn) {
    header["arrays"] = json::array({json{{"name", "points"}, {"rows", p.knn_points_.rows()}, {"cols", p.knn_points_.cols()}},
                                    json{{"name", "targets"}, {"rows", p.knn_targets_.rows()}, {"cols", p.knn_targets_.cols()}}});
  } else {
    header["arrays"] = json::array({json{{"name", "params"}, {"rows", p.params_.size()}, {"cols", 1}}});
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write predictor '{}'", path.string()));
  out.write(kMagic.data(), kMagic.size());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (p.config_.architecture == Architecture::knn) {
    write_array(out, p.knn_points_.data(), static_cast<std::size_t>(p.knn_points_.size()));
    write_array(out, p.knn_targets_.data(), static_cast<std::size_t>(p.knn_targets_.size()));
  } else {
    write_array(out, p.params_.data(), static_cast<std::size_t>(p.params_.size()));
  }
  if (!out) throw std::runtime_error(fmt::format("failed writing predictor '{}'", path.string()));
}

Predictor load_predictor(const std::filesystem::path& path, std::optional<Architecture> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open predictor '{}'", path.string()));
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error(fmt::format("'{}' is not a predictor artifact", path.string()));
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 24)) throw std::runtime_error("predictor header is corrupt");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("predictor header is truncated");

  json header;
  PredictorConfig config;
  std::vector<std::string> pool;
  std::size_t query_dim = 0;
  std::size_t rep_dim = 0;
  try {
    header = json::parse(text);
    if (header.at("format_version").get<int>() != kFormatVersion) {
      throw std::runtime_error(fmt::format("unsupported predictor format version {}", header["format_version"].dump()));
    }
    config = predictor_config_from_json(header.at("config"), PredictorConfig{});
    if (to_string(config.architecture) != header.at("architecture").get<std::string>()) {
      throw std::runtime_error("architecture tag disagrees with config echo");
    }
    pool = header.at("pool").get<std::vector<std::string>>();
    query_dim = header.at("query_dim").get<std::size_t>();
    rep_dim = header.at("rep_dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw std::runtime_error(fmt::format("malformed predictor header: {}", e.what()));
  }
  if (expected && *expected != config.architecture) {
    throw std::runtime_error(fmt::format("predictor '{}' is {}, expected {}", path.string(),
                                         to_string(config.architecture), to_string(*expected)));
  }

  const auto& arrays = header.at("arrays");
  auto shape = [&](std::size_t i, const char* name) {
    if (i >= arrays.size() || arrays[i].at("name").get<std::string>() != name) {
      throw std::runtime_error(fmt::format("predictor artifact lacks array '{}'", name));
    }
    return std::pair{arrays[i].at("rows").get<std::size_t>(), arrays[i].at("cols").get<std::size_t>()};
  };

  if (config.architecture == Architecture::knn) {
    const auto [pr, pc] = shape(0, "points");
    const auto [tr, tc] = shape(1, "targets");
    if (pc != query_dim || tr != pr || tc != pool.size()) throw std::runtime_error("knn artifact shape mismatch");
    Predictor p;
    p.config_ = config;
    p.pool_ = std::move(pool);
    p.query_dim_ = query_dim;
    p.knn_points_ = read_array(in, pr, pc);
    p.knn_targets_ = read_array(in, tr, tc);
    return p;
  }
  const auto [rows, cols] = shape(0, "params");
  const auto net = make_network(config, query_dim, rep_dim, pool.size());
  if (cols != 1 || rows != net->num_params()) {
    throw std::runtime_error(fmt::format("parameter shape {}x{} does not match {} ({} parameters)", rows, cols,
                                         to_string(config.architecture), net->num_params()));
  }
  Matrix params = read_array(in, rows, 1);
  return make_network_predictor(config, std::move(pool), query_dim, rep_dim,
                                Eigen::Map<const Vector>(params.data(), params.size()));
}

}  // namespace costroute
