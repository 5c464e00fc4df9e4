#include "costroute/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "costroute/config_json.hpp"

namespace costroute {

using nlohmann::json;

StageError::StageError(std::string stage, const std::string& cause)
    : std::runtime_error(fmt::format("{}: {}", stage, cause)), stage_(std::move(stage)) {}

namespace {

template <typename F>
auto stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::vector<std::string> arch_names(const std::vector<Architecture>& archs) {
  std::vector<std::string> out;
  for (auto a : archs) out.emplace_back(to_string(a));
  return out;
}

std::vector<Architecture> parse_archs(const json& j) {
  std::vector<Architecture> out;
  for (const auto& s : j.get<std::vector<std::string>>()) out.push_back(parse_architecture(s));
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

}  // namespace

// --- config ------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  static const std::vector<std::string> known{"seed", "dataset", "synth", "normalize", "split", "pool",
                                              "representations", "quality_predictor", "cost_predictor", "reward",
                                              "lambda_grid", "strongest_model", "absolute_sensitivity", "ablation",
                                              "output_dir"};
  if (!j.is_object()) throw std::invalid_argument("experiment config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::ranges::find(known, key) == known.end()) {
      throw std::invalid_argument(fmt::format("unknown config key '{}'", key));
    }
  }

  ExperimentConfig c;
  try {
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    c.synth_seed = c.seed;
    if (j.contains("synth")) {
      c.synth = synth_spec_from_json(j["synth"], SynthSpec{});
      c.synth_seed = j["synth"].value("seed", c.seed);
    }
    c.normalize = j.value("normalize", true);
    c.split.seed = c.seed;
    if (j.contains("split")) c.split = split_spec_from_json(j["split"], c.split);
    c.pool = j.value("pool", std::vector<std::string>{});

    c.representations.seed = c.seed + 1;
    if (j.contains("representations")) {
      const auto& r = j["representations"];
      for (const auto& [key, _] : r.items()) {
        if (key != "clusters" && key != "candidates" && key != "sample_frac" && key != "max_iters" && key != "seed") {
          throw std::invalid_argument(fmt::format("unknown key '{}' in representations", key));
        }
      }
      c.representations.clusters = r.value("clusters", c.representations.clusters);
      c.representations.candidates = r.value("candidates", c.representations.candidates);
      c.representations.sample_frac = r.value("sample_frac", c.representations.sample_frac);
      c.representations.max_iters = r.value("max_iters", c.representations.max_iters);
      c.representations.seed = r.value("seed", c.representations.seed);
    }

    auto predictor = [&](const char* key, Target target, std::uint64_t seed) {
      Architecture arch = Architecture::attention;
      const json* sub = j.contains(key) ? &j[key] : nullptr;
      if (sub && sub->contains("architecture")) arch = parse_architecture((*sub)["architecture"].get<std::string>());
      PredictorConfig base = PredictorConfig::defaults(arch, target);
      base.seed = seed;
      if (sub) base = predictor_config_from_json(*sub, base);
      if (base.target != target) throw std::invalid_argument(fmt::format("{} must have target {}", key, to_string(target)));
      return base;
    };
    c.quality = predictor("quality_predictor", Target::quality, c.seed + 2);
    c.cost = predictor("cost_predictor", Target::cost, c.seed + 3);

    if (j.contains("reward")) c.reward = parse_reward_family(j["reward"].get<std::string>());
    if (j.contains("lambda_grid")) {
      const auto& g = j["lambda_grid"];
      c.lambda_grid = g.is_string() ? parse_lambda_grid(g.get<std::string>()) : g.get<std::vector<double>>();
    }
    c.strongest_model = j.value("strongest_model", std::string{});
    c.absolute_sensitivity = j.value("absolute_sensitivity", false);
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      c.ablation.enabled = a.value("enabled", false);
      if (a.contains("quality")) c.ablation.quality = parse_archs(a["quality"]);
      if (a.contains("cost")) c.ablation.cost = parse_archs(a["cost"]);
    }
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("experiment config: {}", e.what()));
  }
  return c;
}

json ExperimentConfig::to_json() const {
  json j{{"seed", seed},
         {"normalize", normalize},
         {"split", costroute::to_json(split)},
         {"pool", pool},
         {"representations",
          {{"clusters", representations.clusters},
           {"candidates", representations.candidates},
           {"sample_frac", representations.sample_frac},
           {"max_iters", representations.max_iters},
           {"seed", representations.seed}}},
         {"quality_predictor", costroute::to_json(quality)},
         {"cost_predictor", costroute::to_json(cost)},
         {"reward", to_string(reward)},
         {"lambda_grid", lambda_grid},
         {"strongest_model", strongest_model},
         {"absolute_sensitivity", absolute_sensitivity},
         {"ablation",
          {{"enabled", ablation.enabled}, {"quality", arch_names(ablation.quality)}, {"cost", arch_names(ablation.cost)}}},
         {"output_dir", output_dir.string()}};
  if (dataset) j["dataset"] = dataset->string();
  if (synth) {
    j["synth"] = costroute::to_json(*synth);
    j["synth"]["seed"] = synth_seed;
  }
  return j;
}

void ExperimentConfig::validate() const {
  if (!dataset && !synth) throw std::invalid_argument("config needs either 'dataset' or 'synth'");
  if (synth) synth->validate();
  split.validate();
  quality.validate();
  cost.validate();
  if (quality.target != Target::quality || cost.target != Target::cost) {
    throw std::invalid_argument("predictor targets are swapped");
  }
  if (lambda_grid.size() < 3) throw std::invalid_argument("lambda grid needs at least three values");
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    RewardSpec{reward, lambda_grid[i]}.validate();
    if (i > 0 && !(lambda_grid[i] > lambda_grid[i - 1])) {
      throw std::invalid_argument("lambda grid must be strictly ascending");
    }
  }
  if (representations.clusters == 0 && representations.candidates.empty()) {
    throw std::invalid_argument("representations need a cluster count");
  }
  if (!(representations.sample_frac > 0.0 && representations.sample_frac <= 1.0)) {
    throw std::invalid_argument("representation sample_frac must be in (0, 1]");
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open config '{}'", path.string()));
  try {
    return ExperimentConfig::from_json(json::parse(in, nullptr, true, /*ignore_comments=*/true));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(fmt::format("config '{}': {}", path.string(), e.what()));
  }
}

std::vector<double> parse_lambda_grid(const std::string& text) {
  if (text.starts_with("log:")) {
    double lo = 0.0, hi = 0.0;
    std::size_t count = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text.substr(4));
    if (!(in >> lo >> c1 >> hi >> c2 >> count) || c1 != ':' || c2 != ':') {
      throw std::invalid_argument(fmt::format("bad lambda grid '{}' (expected log:<lo>:<hi>:<count>)", text));
    }
    return log_lambda_grid(count, lo, hi);
  }
  std::vector<double> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument(fmt::format("bad lambda value '{}'", item));
    }
  }
  return out;
}

// --- pipeline ----------------------------------------------------------------

RoutingDataset prepare_dataset(const ExperimentConfig& config) {
  RoutingDataset ds = config.dataset ? load_dataset(*config.dataset) : synth_generate(*config.synth, config.synth_seed);
  if (!config.pool.empty()) ds = ds.select_models(config.pool);
  if (config.normalize) ds = normalize_embeddings(ds);
  return ds;
}

Representations build_experiment_representations(const RoutingDataset& train, const ExperimentConfig& config) {
  const auto& r = config.representations;
  const Matrix x = train.embeddings();
  std::size_t clusters = r.clusters;
  if (!r.candidates.empty()) clusters = select_cluster_count(x, r.candidates, r.seed);
  const auto model = kmeans(x, clusters, r.seed, r.max_iters);
  return build_representations(train, model, r.sample_frac, r.seed);
}

std::string resolve_strongest_model(const RoutingDataset& train, const ExperimentConfig& config) {
  if (!config.strongest_model.empty()) {
    (void)train.model_index(config.strongest_model);
    return config.strongest_model;
  }
  const Eigen::RowVectorXd mean_cost = train.costs().colwise().mean();
  Eigen::Index best = 0;
  mean_cost.maxCoeff(&best);
  return train.pool()[static_cast<std::size_t>(best)];
}

RouterEvaluation evaluate_router(std::string name, const PredictionMatrix& quality, const PredictionMatrix& cost,
                                 const RoutingDataset& test, const ExperimentConfig& config,
                                 const std::string& strongest) {
  RouterEvaluation ev{std::move(name), sweep(predicted_policy(quality, cost), test, config.lambda_grid, config.reward),
                      {}};
  ev.metrics = metrics_report(ev.sweep.points, test.pool(), strongest, config.absolute_sensitivity);
  return ev;
}

RouterEvaluation evaluate_oracle(const RoutingDataset& test, const ExperimentConfig& config,
                                 const std::string& strongest) {
  RouterEvaluation ev{"oracle", sweep(oracle_policy(test), test, config.lambda_grid, config.reward), {}};
  ev.metrics = metrics_report(ev.sweep.points, test.pool(), strongest, config.absolute_sensitivity);
  return ev;
}

namespace {

json evaluation_json(const RouterEvaluation& ev) {
  json points = json::array();
  for (const auto& p : ev.sweep.points) points.push_back(to_json(p));
  return json{{"name", ev.name}, {"sweep", points}, {"metrics", to_json(ev.metrics)}};
}

std::string plot_rows(const RouterEvaluation& ev) {
  std::string out;
  for (const auto& p : ev.sweep.points) out += fmt::format("{}\t{}\t{}\t{}\n", ev.name, p.lambda, p.avg_cost, p.avg_perf);
  return out;
}

void mark_failed(const std::filesystem::path& dir, const StageError& e) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream out(dir / "FAILED");
  out << fmt::format("stage: {}\nerror: {}\n", e.stage(), e.what());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const auto& dir = config.output_dir;
  try {
    stage("config", [&] {
      config.validate();
      std::filesystem::create_directories(dir);
      std::filesystem::remove(dir / "FAILED");
      write_text(dir / "config.echo", config.to_json().dump(2) + "\n");
    });
    const RoutingDataset ds = stage("load", [&] { return prepare_dataset(config); });
    const DatasetSplit parts = stage("split", [&] { return split(ds, config.split); });
    const Representations reps = stage("representations", [&] {
      auto r = build_experiment_representations(parts.train, config);
      save_representations(r, dir / "reps.tsv");
      return r;
    });

    ExperimentResult result;
    result.pool = ds.pool();
    result.strongest_model = stage("config", [&] { return resolve_strongest_model(parts.train, config); });

    const Predictor quality = stage("train-quality", [&] {
      auto p = train(parts.train, parts.val, reps, config.quality);
      save_predictor(p, dir / "predictor-quality.bin");
      return p;
    });
    const Predictor cost = stage("train-cost", [&] {
      auto p = train(parts.train, parts.val, reps, config.cost);
      save_predictor(p, dir / "predictor-cost.bin");
      return p;
    });

    stage("sweep", [&] {
      const auto qs = predict_matrix(quality, parts.test, reps);
      const auto cs = predict_matrix(cost, parts.test, reps);
      const auto name = fmt::format("{}/{}", to_string(config.quality.architecture), to_string(config.cost.architecture));
      result.router = evaluate_router(name, qs, cs, parts.test, config, result.strongest_model);
      result.oracle = evaluate_oracle(parts.test, config, result.strongest_model);
      save_trace(result.router.sweep.trace, dir / "trace.jsonl");
    });

    if (config.ablation.enabled) {
      stage("ablation", [&] {
        // Each predictor is trained once; "oracle" stands for the ground truth.
        std::vector<std::pair<std::string, PredictionMatrix>> qualities{
            {"oracle", PredictionMatrix{parts.test.quality(), Target::quality}}};
        std::vector<std::pair<std::string, PredictionMatrix>> costs{
            {"oracle", PredictionMatrix{parts.test.costs(), Target::cost}}};
        for (auto arch : config.ablation.quality) {
          auto pc = config.quality.architecture == arch ? config.quality : PredictorConfig::defaults(arch, Target::quality);
          pc.architecture = arch;
          pc.hidden_dims.clear();
          pc.seed = config.quality.seed;
          pc.epochs = config.quality.epochs;
          pc.batch_size = config.quality.batch_size;
          qualities.emplace_back(std::string(to_string(arch)),
                                 predict_matrix(train(parts.train, parts.val, reps, pc), parts.test, reps));
        }
        for (auto arch : config.ablation.cost) {
          auto pc = config.cost.architecture == arch ? config.cost : PredictorConfig::defaults(arch, Target::cost);
          pc.architecture = arch;
          pc.hidden_dims.clear();
          pc.seed = config.cost.seed;
          pc.epochs = config.cost.epochs;
          pc.batch_size = config.cost.batch_size;
          costs.emplace_back(std::string(to_string(arch)),
                             predict_matrix(train(parts.train, parts.val, reps, pc), parts.test, reps));
        }
        for (const auto& [qn, qm] : qualities) {
          for (const auto& [cn, cm] : costs) {
            const auto ev = evaluate_router(qn + "/" + cn, qm, cm, parts.test, config, result.strongest_model);
            result.ablation.push_back({qn, cn, ev.metrics.aiq, ev.metrics.perf_max});
          }
        }
      });
    }

    stage("report", [&] {
      json report{{"pool", result.pool},
                  {"strongest_model", result.strongest_model},
                  {"reward", to_string(config.reward)},
                  {"lambda_grid", config.lambda_grid},
                  {"test_size", parts.test.size()},
                  {"router", evaluation_json(result.router)},
                  {"oracle", evaluation_json(result.oracle)}};
      if (!result.ablation.empty()) {
        json grid = json::array();
        for (const auto& cell : result.ablation) {
          grid.push_back({{"quality", cell.quality},
                          {"cost", cell.cost},
                          {"aiq", cell.aiq ? json(*cell.aiq) : json(nullptr)},
                          {"perf_max", cell.perf_max}});
        }
        report["ablation"] = grid;
      }
      result.report = report;
      write_text(dir / "report.json", report.dump(2) + "\n");
      write_text(dir / "report.txt", format_report_table(result, config));
      write_text(dir / "plot.tsv", "router\tlambda\tavg_cost\tavg_perf\n" + plot_rows(result.router) +
                                       plot_rows(result.oracle));
    });
    return result;
  } catch (const StageError& e) {
    mark_failed(dir, e);
    throw;
  }
}

// --- traces ------------------------------------------------------------------

std::vector<TraceEntry> load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open trace '{}'", path.string()));
  std::vector<TraceEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(trace_entry_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("malformed trace line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

void save_trace(std::span<const TraceEntry> trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write trace '{}'", path.string()));
  for (const auto& e : trace) out << to_json(e).dump() << '\n';
}

MetricsReport evaluate_trace(std::span<const TraceEntry> trace, const std::string& strongest_model,
                             bool absolute_sensitivity) {
  if (trace.empty()) throw std::invalid_argument("empty trace");
  const auto points = points_from_trace(trace);
  std::vector<std::string> pool(trace.front().pool_size);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = fmt::format("#{}", i);
  for (const auto& e : trace) pool.at(e.model) = e.model_name;
  if (std::ranges::find(pool, strongest_model) == pool.end()) {
    // Never chosen at any lambda.
    auto m = metrics_report(points, pool, pool.front(), absolute_sensitivity);
    m.max_calls = 0.0;
    return m;
  }
  return metrics_report(points, pool, strongest_model, absolute_sensitivity);
}

std::string format_report_table(const ExperimentResult& result, const ExperimentConfig& config) {
  auto fmt_aiq = [](const std::optional<double>& v) { return v ? fmt::format("{:.5f}", *v) : std::string("n/a"); };
  std::string out = fmt::format("reward {}  |  pool [{}]  |  strongest {}\n\n", to_string(config.reward),
                                fmt::join(result.pool, ", "), result.strongest_model);
  out += fmt::format("{:<28} {:>9} {:>9} {:>12} {:>12} {:>10}\n", "router", "AIQ", "Perf_max", "sens_perf",
                     "sens_cost", "MaxCalls");
  for (const auto* ev : {&result.router, &result.oracle}) {
    const auto& m = ev->metrics;
    out += fmt::format("{:<28} {:>9} {:>9.5f} {:>12.4e} {:>12.4e} {:>9.3f}%\n", ev->name, fmt_aiq(m.aiq), m.perf_max,
                       m.sens_perf, m.sens_cost, 100.0 * m.max_calls);
  }
  if (!result.ablation.empty()) {
    std::vector<std::string> qs, cs;
    for (const auto& cell : result.ablation) {
      if (std::ranges::find(qs, cell.quality) == qs.end()) qs.push_back(cell.quality);
      if (std::ranges::find(cs, cell.cost) == cs.end()) cs.push_back(cell.cost);
    }
    out += "\nAIQ by predictor pair (rows: quality, columns: cost)\n";
    out += fmt::format("{:<12}", "");
    for (const auto& c : cs) out += fmt::format(" {:>11}", c);
    out += "\n";
    for (const auto& q : qs) {
      out += fmt::format("{:<12}", q);
      for (const auto& c : cs) {
        auto it = std::ranges::find_if(result.ablation, [&](const AblationCell& x) { return x.quality == q && x.cost == c; });
        out += fmt::format(" {:>11}", fmt_aiq(it->aiq));
      }
      out += "\n";
    }
  }
  return out;
}

}  // namespace costroute
