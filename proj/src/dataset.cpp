#include "costroute/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

namespace costroute {

using nlohmann::json;

namespace {

void check_record(const QueryRecord& r, std::size_t num_models, std::size_t dim, std::size_t row) {
  if (r.embedding.size() != dim) {
    throw DatasetError(fmt::format("record {} ('{}'): embedding has {} entries, expected {}", row, r.id,
                                   r.embedding.size(), dim));
  }
  if (!std::ranges::all_of(r.embedding, [](double v) { return std::isfinite(v); })) {
    throw DatasetError(fmt::format("record {} ('{}'): non-finite embedding entry", row, r.id));
  }
  if (r.quality.size() != num_models || r.cost.size() != num_models) {
    throw DatasetError(fmt::format("record {} ('{}'): quality/cost do not cover the {}-model pool", row, r.id,
                                   num_models));
  }
  for (std::size_t m = 0; m < num_models; ++m) {
    const double s = r.quality[m];
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
      throw DatasetError(fmt::format("record {} ('{}'): quality {} outside [0,1]", row, r.id, s));
    }
    const double c = r.cost[m];
    if (!std::isfinite(c) || c < 0.0) {
      throw DatasetError(fmt::format("record {} ('{}'): cost {} is negative or non-finite", row, r.id, c));
    }
  }
}

}  // namespace

RoutingDataset::RoutingDataset(std::vector<std::string> pool, std::size_t dim, std::vector<QueryRecord> records)
    : pool_(std::move(pool)), dim_(dim), records_(std::move(records)) {
  if (pool_.empty()) throw DatasetError("model pool is empty");
  if (dim_ == 0) throw DatasetError("embedding dimension must be positive");
  std::unordered_set<std::string> seen;
  for (const auto& name : pool_) {
    if (name.empty()) throw DatasetError("model name is empty");
    if (!seen.insert(name).second) throw DatasetError(fmt::format("duplicate model name '{}'", name));
  }
  for (std::size_t i = 0; i < records_.size(); ++i) check_record(records_[i], pool_.size(), dim_, i);
}

std::size_t RoutingDataset::model_index(std::string_view name) const {
  auto it = std::ranges::find(pool_, name);
  if (it == pool_.end()) throw DatasetError(fmt::format("model '{}' is not in the pool", name));
  return static_cast<std::size_t>(it - pool_.begin());
}

Matrix RoutingDataset::embeddings() const {
  Matrix out(records_.size(), dim_);
  for (std::size_t i = 0; i < records_.size(); ++i) {
    out.row(i) = Eigen::Map<const Eigen::RowVectorXd>(records_[i].embedding.data(), dim_);
  }
  return out;
}

Matrix RoutingDataset::quality() const {
  Matrix out(records_.size(), pool_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    out.row(i) = Eigen::Map<const Eigen::RowVectorXd>(records_[i].quality.data(), pool_.size());
  }
  return out;
}

Matrix RoutingDataset::costs() const {
  Matrix out(records_.size(), pool_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    out.row(i) = Eigen::Map<const Eigen::RowVectorXd>(records_[i].cost.data(), pool_.size());
  }
  return out;
}

RoutingDataset RoutingDataset::subset(std::span<const std::size_t> rows) const {
  std::vector<QueryRecord> picked;
  picked.reserve(rows.size());
  for (auto r : rows) {
    if (r >= records_.size()) throw DatasetError(fmt::format("row {} out of range ({} records)", r, size()));
    picked.push_back(records_[r]);
  }
  return RoutingDataset(pool_, dim_, std::move(picked));
}

RoutingDataset RoutingDataset::select_models(std::span<const std::string> names) const {
  std::vector<std::size_t> idx;
  idx.reserve(names.size());
  for (const auto& n : names) idx.push_back(model_index(n));
  std::vector<QueryRecord> out = records_;
  for (auto& r : out) {
    std::vector<double> s, c;
    s.reserve(idx.size());
    c.reserve(idx.size());
    for (auto m : idx) {
      s.push_back(r.quality[m]);
      c.push_back(r.cost[m]);
    }
    r.quality = std::move(s);
    r.cost = std::move(c);
  }
  return RoutingDataset({names.begin(), names.end()}, dim_, std::move(out));
}

// --- canonical format --------------------------------------------------------

std::filesystem::path manifest_path_for(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p.replace_extension(".manifest.json");
  return p;
}

RoutingDataset load_dataset(const std::filesystem::path& path) {
  return load_dataset(path, manifest_path_for(path));
}

RoutingDataset load_dataset(const std::filesystem::path& path, const std::filesystem::path& manifest) {
  std::ifstream mf(manifest);
  if (!mf) throw DatasetError(fmt::format("cannot open pool manifest '{}'", manifest.string()));
  std::vector<std::string> pool;
  std::size_t dim = 0;
  try {
    const json m = json::parse(mf);
    pool = m.at("models").get<std::vector<std::string>>();
    dim = m.at("dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DatasetError(fmt::format("malformed pool manifest '{}': {}", manifest.string(), e.what()));
  }

  std::ifstream in(path);
  if (!in) throw DatasetError(fmt::format("cannot open dataset '{}'", path.string()));

  std::vector<QueryRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    QueryRecord r;
    json obj;
    try {
      obj = json::parse(line);
      r.id = obj.at("id").get<std::string>();
      r.group = obj.value("group", std::string{});
      r.embedding = obj.at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw DatasetError(fmt::format("malformed record at line {}: {}", line_no, e.what()));
    }
    if (r.embedding.size() != dim) {
      throw DatasetError(fmt::format("embedding dimension mismatch at line {}: got {}, expected {}", line_no,
                                     r.embedding.size(), dim));
    }
    double norm2 = 0.0;
    for (double v : r.embedding) {
      if (!std::isfinite(v)) throw DatasetError(fmt::format("non-finite embedding at line {}", line_no));
      norm2 += v * v;
    }
    if (norm2 == 0.0) throw DatasetError(fmt::format("zero embedding at line {}", line_no));

    const auto* qmap = obj.contains("quality") ? &obj["quality"] : nullptr;
    const auto* cmap = obj.contains("cost") ? &obj["cost"] : nullptr;
    if (!qmap || !cmap || !qmap->is_object() || !cmap->is_object()) {
      throw DatasetError(fmt::format("malformed record at line {}: quality and cost must be objects", line_no));
    }
    if (qmap->size() != pool.size() || cmap->size() != pool.size()) {
      throw DatasetError(fmt::format("inconsistent model set at line {}", line_no));
    }
    r.quality.resize(pool.size());
    r.cost.resize(pool.size());
    for (std::size_t m = 0; m < pool.size(); ++m) {
      auto qi = qmap->find(pool[m]);
      auto ci = cmap->find(pool[m]);
      if (qi == qmap->end() || ci == cmap->end()) {
        throw DatasetError(fmt::format("inconsistent model set at line {}: missing '{}'", line_no, pool[m]));
      }
      if (!qi->is_number() || !ci->is_number()) {
        throw DatasetError(fmt::format("malformed record at line {}: non-numeric value for '{}'", line_no, pool[m]));
      }
      const double s = qi->get<double>();
      const double c = ci->get<double>();
      if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
        throw DatasetError(fmt::format("quality out of range at line {}", line_no));
      }
      if (!std::isfinite(c) || c < 0.0) throw DatasetError(fmt::format("negative cost at line {}", line_no));
      r.quality[m] = s;
      r.cost[m] = c;
    }
    records.push_back(std::move(r));
  }
  return RoutingDataset(std::move(pool), dim, std::move(records));
}

void save_dataset(const RoutingDataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream mf(manifest_path_for(path));
    if (!mf) throw DatasetError(fmt::format("cannot write manifest for '{}'", path.string()));
    mf << json{{"models", ds.pool()}, {"dim", ds.dim()}}.dump(2) << '\n';
  }
  std::ofstream out(path);
  if (!out) throw DatasetError(fmt::format("cannot write dataset '{}'", path.string()));
  for (const auto& r : ds.records()) {
    json q = json::object();
    json c = json::object();
    for (std::size_t m = 0; m < ds.num_models(); ++m) {
      q[ds.pool()[m]] = r.quality[m];
      c[ds.pool()[m]] = r.cost[m];
    }
    json obj{{"id", r.id}, {"group", r.group}, {"embedding", r.embedding}, {"quality", q}, {"cost", c}};
    out << obj.dump() << '\n';
  }
}

// --- splitting ---------------------------------------------------------------

void SplitSpec::validate() const {
  if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(test_frac > 0.0)) {
    throw DatasetError("split fractions must be positive");
  }
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-12) {
    throw DatasetError(fmt::format("split fractions sum to {}, expected 1", train_frac + val_frac + test_frac));
  }
}

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  // The 1e-9 slack keeps exact products such as 0.05 * 20 from flooring to 0.
  auto alloc = [n](double f) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9)); };
  SplitSizes s{0, alloc(spec.val_frac), alloc(spec.test_frac)};
  if (s.val + s.test > n) throw DatasetError("split allocation exceeds dataset size");
  s.train = n - s.val - s.test;
  if (s.train == 0 || s.val == 0 || s.test == 0) {
    throw DatasetError(fmt::format("{} records are too few to give every split at least one record", n));
  }
  return s;
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const SplitSpec& spec) {
  const auto sizes = split_sizes(n, spec);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> parts(3);
  parts[0].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes.train));
  parts[1].assign(order.begin() + static_cast<std::ptrdiff_t>(sizes.train),
                  order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val));
  parts[2].assign(order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val), order.end());
  return parts;
}

DatasetSplit split(const RoutingDataset& ds, const SplitSpec& spec) {
  if (ds.size() < 3) throw DatasetError(fmt::format("cannot split {} records into three parts", ds.size()));
  const auto parts = split_indices(ds.size(), spec);
  return {ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2])};
}

RoutingDataset normalize_embeddings(const RoutingDataset& ds) {
  std::vector<QueryRecord> out = ds.records();
  for (auto& r : out) {
    double norm2 = 0.0;
    for (double v : r.embedding) norm2 += v * v;
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm) || norm == 0.0) {
      throw DatasetError(fmt::format("record '{}' has a zero or non-finite embedding", r.id));
    }
    for (double& v : r.embedding) v /= norm;
  }
  return RoutingDataset(ds.pool(), ds.dim(), std::move(out));
}

// --- synthetic benchmark -----------------------------------------------------

void SynthSpec::validate() const {
  if (num_models == 0) throw DatasetError("synthetic pool needs at least one model");
  if (n < num_models) throw DatasetError(fmt::format("n={} is smaller than the pool size {}", n, num_models));
  if (clusters < 1) throw DatasetError("need at least one latent cluster");
  if (dim == 0) throw DatasetError("embedding dimension must be positive");
  if (!(noise >= 0.0) || !(cluster_spread >= 0.0) || !(cost_jitter >= 0.0)) {
    throw DatasetError("noise, spread and jitter must be non-negative");
  }
  if (!(cost_min > 0.0) || !(cost_max >= cost_min)) throw DatasetError("invalid base-cost range");
}

namespace {

Eigen::RowVectorXd random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal;
  Eigen::RowVectorXd v(dim);
  do {
    for (std::size_t j = 0; j < dim; ++j) v[j] = normal(rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

}  // namespace

SynthLatent synth_latent(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const auto K = spec.num_models;
  const auto G = spec.clusters;

  SynthLatent lat;
  lat.centers.resize(G, spec.dim);
  for (std::size_t g = 0; g < G; ++g) lat.centers.row(g) = random_unit(rng, spec.dim);

  // Log-uniform base costs, sorted so the last model is the most expensive.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  lat.base_cost.resize(K);
  const double lo = std::log(spec.cost_min);
  const double hi = std::log(spec.cost_max);
  for (auto& c : lat.base_cost) c = std::exp(lo + (hi - lo) * unit(rng));
  std::ranges::sort(lat.base_cost);

  // Pricier models are stronger on average; per-cluster skill varies around that.
  lat.skill.resize(K, G);
  for (std::size_t m = 0; m < K; ++m) {
    const double strength = K == 1 ? 0.5 : 0.3 + 0.3 * static_cast<double>(m) / static_cast<double>(K - 1);
    for (std::size_t g = 0; g < G; ++g) {
      lat.skill(m, g) = std::clamp(strength + 0.5 * (unit(rng) - 0.5), 0.05, 0.85);
    }
  }
  // Every model owns the top skill of at least one cluster when K <= G.
  if (K <= G && K > 1) {
    std::vector<std::size_t> perm(G);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t m = 0; m < K; ++m) {
      const auto g = perm[m];
      double best_other = 0.0;
      for (std::size_t o = 0; o < K; ++o) {
        if (o != m) best_other = std::max(best_other, lat.skill(o, g));
      }
      lat.skill(m, g) = std::min(1.0, best_other + 0.1);
    }
  }
  return lat;
}

RoutingDataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  const SynthLatent lat = synth_latent(spec, seed);
  // Separate stream so the latent structure does not depend on n.
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> pick_cluster(0, spec.clusters - 1);
  const double per_dim_spread = spec.cluster_spread / std::sqrt(static_cast<double>(spec.dim));

  std::vector<std::string> pool;
  for (std::size_t m = 0; m < spec.num_models; ++m) pool.push_back(fmt::format("model-{}", m));

  std::vector<QueryRecord> records;
  records.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto g = pick_cluster(rng);
    Eigen::RowVectorXd e = lat.centers.row(g);
    for (std::size_t j = 0; j < spec.dim; ++j) e[j] += per_dim_spread * normal(rng);
    if (e.norm() == 0.0) e = lat.centers.row(g);
    e /= e.norm();

    QueryRecord r;
    r.id = fmt::format("q{:06d}", i);
    r.group = fmt::format("cluster-{}", g);
    r.embedding.assign(e.data(), e.data() + e.size());
    r.quality.resize(spec.num_models);
    r.cost.resize(spec.num_models);
    for (std::size_t m = 0; m < spec.num_models; ++m) {
      const double s = lat.skill(m, g);
      r.quality[m] = spec.noise == 0.0 ? s : std::clamp(s + spec.noise * normal(rng), 0.0, 1.0);
      const double jitter = spec.cost_jitter * std::exp(0.5 * normal(rng));
      r.cost[m] = lat.base_cost[m] * (1.0 + jitter);
    }
    records.push_back(std::move(r));
  }
  return RoutingDataset(std::move(pool), spec.dim, std::move(records));
}

}  // namespace costroute
