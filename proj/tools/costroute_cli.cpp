// costroute: command-line driver for the routing pipeline.
//
//   costroute synth      --out data.jsonl [--n N --models K --dim D --clusters G --noise X]
//   costroute build-reps [--data D] --out reps.tsv
//   costroute train      --target quality|cost --reps reps.tsv --out model.bin
//   costroute sweep      --quality q.bin --cost c.bin --reps reps.tsv --out dir
//   costroute eval       --trace trace.jsonl --strongest NAME
//   costroute route      --quality q.bin --cost c.bin --reps reps.tsv --embedding x,y,.. --lambda L
//   costroute report     --dir dir
//   costroute run        [--ablation] --out dir
//
// Every command accepts --config plus the common overrides below.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "costroute/config_json.hpp"
#include "costroute/experiment.hpp"

namespace cr = costroute;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string lambda_grid;
  std::string pool;
  std::string arch_quality;
  std::string arch_cost;
  std::string reward;
  std::string data;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed; sub-seeds are derived from it");
  cmd->add_option("--lambda-grid", c.lambda_grid, "a,b,c or log:<lo>:<hi>:<count>");
  cmd->add_option("--pool", c.pool, "comma-separated model subset");
  cmd->add_option("--arch-quality", c.arch_quality, "quality predictor architecture");
  cmd->add_option("--arch-cost", c.arch_cost, "cost predictor architecture");
  cmd->add_option("--reward", c.reward, "reward family")->check(CLI::IsMember({"r1", "r2"}));
  cmd->add_option("--data", c.data, "canonical dataset file (overrides the config)")->check(CLI::ExistingFile);
  cmd->add_option("--epochs", c.epochs, "training epochs for both predictors");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Overrides are applied to the JSON before parsing so derived sub-seeds follow
// --seed exactly as they would follow a "seed" key.
cr::ExperimentConfig resolve_config(const Common& c, const std::string& out_dir = {}) {
  json j = json::object();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    j = json::parse(in, nullptr, true, true);
  }
  if (c.seed) j["seed"] = *c.seed;
  if (!c.data.empty()) {
    j["dataset"] = c.data;
    j.erase("synth");
  }
  if (!j.contains("dataset") && !j.contains("synth")) j["synth"] = json::object();
  if (!c.lambda_grid.empty()) j["lambda_grid"] = c.lambda_grid;
  if (!c.pool.empty()) j["pool"] = split_list(c.pool);
  if (!c.reward.empty()) j["reward"] = c.reward;
  auto predictor = [&](const char* key, const std::string& arch) {
    if (!arch.empty()) {
      // A new architecture resets that predictor's hyperparameters to its defaults.
      json sub = json::object();
      if (j.contains(key) && j[key].contains("seed")) sub["seed"] = j[key]["seed"];
      sub["architecture"] = arch;
      j[key] = sub;
    }
    if (c.epochs) j[key]["epochs"] = *c.epochs;
  };
  predictor("quality_predictor", c.arch_quality);
  predictor("cost_predictor", c.arch_cost);
  if (!out_dir.empty()) j["output_dir"] = out_dir;
  auto config = cr::ExperimentConfig::from_json(j);
  config.validate();
  return config;
}

cr::DatasetSplit load_split(const cr::ExperimentConfig& config) {
  const auto ds = cr::prepare_dataset(config);
  return cr::split(ds, config.split);
}

template <typename F>
auto in_stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const cr::StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw cr::StageError(name, e.what());
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path));
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cost-aware LLM routing: predictors, sweeps and metrics"};
  app.require_subcommand(1);

  // synth
  Common synth_common;
  std::string synth_out;
  cr::SynthSpec synth_spec;
  auto* synth = app.add_subcommand("synth", "generate a synthetic routing dataset");
  add_common(synth, synth_common);
  synth->add_option("--out", synth_out, "dataset file to write (manifest goes alongside)")->required();
  synth->add_option("--n", synth_spec.n, "number of queries");
  synth->add_option("--models", synth_spec.num_models, "number of models");
  synth->add_option("--dim", synth_spec.dim, "embedding dimension");
  synth->add_option("--clusters", synth_spec.clusters, "latent skill clusters");
  synth->add_option("--noise", synth_spec.noise, "quality noise level");

  // build-reps
  Common reps_common;
  std::string reps_out;
  auto* build_reps = app.add_subcommand("build-reps", "cluster the training split and build model representations");
  add_common(build_reps, reps_common);
  build_reps->add_option("--out", reps_out, "representation file to write")->required();

  // train
  Common train_common;
  std::string train_target, train_reps, train_out;
  auto* train = app.add_subcommand("train", "train one predictor on the training split");
  add_common(train, train_common);
  train->add_option("--target", train_target, "quality or cost")->required()->check(CLI::IsMember({"quality", "cost"}));
  train->add_option("--reps", train_reps, "representation file")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "predictor artifact to write")->required();

  // sweep
  Common sweep_common;
  std::string sweep_q, sweep_c, sweep_reps, sweep_out;
  auto* sweep = app.add_subcommand("sweep", "route the test split over the lambda grid");
  add_common(sweep, sweep_common);
  sweep->add_option("--quality", sweep_q, "quality predictor artifact")->required()->check(CLI::ExistingFile);
  sweep->add_option("--cost", sweep_c, "cost predictor artifact")->required()->check(CLI::ExistingFile);
  sweep->add_option("--reps", sweep_reps, "representation file")->check(CLI::ExistingFile);
  sweep->add_option("--out", sweep_out, "output directory")->required();

  // eval
  std::string eval_trace, eval_strongest;
  bool eval_absolute = false;
  auto* eval = app.add_subcommand("eval", "recompute metrics from a routing trace");
  eval->add_option("--trace", eval_trace, "trace file")->required()->check(CLI::ExistingFile);
  eval->add_option("--strongest", eval_strongest, "name of the strongest model")->required();
  eval->add_flag("--absolute", eval_absolute, "use |delta| in lambda sensitivity");

  // route
  Common route_common;
  std::string route_q, route_c, route_reps, route_embedding;
  double route_lambda = 0.0;
  auto* route = app.add_subcommand("route", "route a single query embedding");
  add_common(route, route_common);
  route->add_option("--quality", route_q, "quality predictor artifact")->required()->check(CLI::ExistingFile);
  route->add_option("--cost", route_c, "cost predictor artifact")->required()->check(CLI::ExistingFile);
  route->add_option("--reps", route_reps, "representation file")->check(CLI::ExistingFile);
  route->add_option("--embedding", route_embedding, "comma-separated query embedding")->required();
  route->add_option("--lambda", route_lambda, "willingness to pay")->required();

  // report
  std::string report_dir;
  auto* report = app.add_subcommand("report", "print the report table of a finished run");
  report->add_option("--dir", report_dir, "run output directory")->required()->check(CLI::ExistingDirectory);

  // run
  Common run_common;
  std::string run_out;
  bool run_ablation = false;
  auto* run = app.add_subcommand("run", "full pipeline: data, representations, training, sweep, report");
  add_common(run, run_common);
  run->add_option("--out", run_out, "output directory");
  run->add_flag("--ablation", run_ablation, "also evaluate every quality x cost predictor pair");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      in_stage("synth", [&] {
        json j = json::object();
        if (!synth_common.config.empty()) {
          std::ifstream in(synth_common.config);
          j = json::parse(in, nullptr, true, true);
        }
        cr::SynthSpec spec = j.contains("synth") ? cr::synth_spec_from_json(j["synth"], cr::SynthSpec{}) : cr::SynthSpec{};
        std::uint64_t seed = j.contains("synth") ? j["synth"].value("seed", j.value("seed", std::uint64_t{0}))
                                                 : j.value("seed", std::uint64_t{0});
        if (synth_common.seed) seed = *synth_common.seed;
        // Explicit flags win over the config.
        for (const auto* opt : synth->get_options()) {
          if (opt->count() == 0) continue;
          const auto& n = opt->get_name();
          if (n == "--n") spec.n = synth_spec.n;
          if (n == "--models") spec.num_models = synth_spec.num_models;
          if (n == "--dim") spec.dim = synth_spec.dim;
          if (n == "--clusters") spec.clusters = synth_spec.clusters;
          if (n == "--noise") spec.noise = synth_spec.noise;
        }
        auto ds = cr::synth_generate(spec, seed);
        if (!synth_common.pool.empty()) ds = ds.select_models(split_list(synth_common.pool));
        cr::save_dataset(ds, synth_out);
        fmt::print("wrote {} records, {} models, dim {} to {}\n", ds.size(), ds.num_models(), ds.dim(), synth_out);
      });
    } else if (*build_reps) {
      const auto config = in_stage("config", [&] { return resolve_config(reps_common); });
      const auto parts = in_stage("load", [&] { return load_split(config); });
      in_stage("representations", [&] {
        const auto reps = cr::build_experiment_representations(parts.train, config);
        cr::save_representations(reps, reps_out);
        fmt::print("wrote {} representations of length {} to {}\n", reps.size(),
                   reps.empty() ? 0 : reps.front().values.size(), reps_out);
      });
    } else if (*train) {
      const auto config = in_stage("config", [&] { return resolve_config(train_common); });
      const auto parts = in_stage("load", [&] { return load_split(config); });
      const bool quality = train_target == "quality";
      const auto& pc = quality ? config.quality : config.cost;
      cr::Representations reps;
      if (cr::uses_representations(pc.architecture)) {
        reps = in_stage("representations", [&] {
          return train_reps.empty() ? cr::build_experiment_representations(parts.train, config)
                                    : cr::load_representations(train_reps);
        });
      }
      in_stage(quality ? "train-quality" : "train-cost", [&] {
        const auto p = cr::train(parts.train, parts.val, reps, pc);
        cr::save_predictor(p, train_out);
        const auto& h = p.history();
        fmt::print("trained {} predictor ({}), best epoch {}, best monitored MSE {:.6g}; wrote {}\n",
                   cr::to_string(pc.target), cr::to_string(pc.architecture), h.best_epoch, h.best_val_loss,
                   train_out);
      });
    } else if (*sweep) {
      auto config = in_stage("config", [&] { return resolve_config(sweep_common, sweep_out); });
      const auto parts = in_stage("load", [&] { return load_split(config); });
      const auto qp = in_stage("load", [&] { return cr::load_predictor(sweep_q); });
      const auto cp = in_stage("load", [&] { return cr::load_predictor(sweep_c); });
      if (qp.config().target != cr::Target::quality || cp.config().target != cr::Target::cost) {
        throw cr::StageError("load", "predictor targets do not match --quality/--cost");
      }
      const cr::Representations reps =
          sweep_reps.empty() ? cr::Representations{} : in_stage("load", [&] { return cr::load_representations(sweep_reps); });
      in_stage("sweep", [&] {
        const auto strongest = cr::resolve_strongest_model(parts.train, config);
        const auto name = fmt::format("{}/{}", cr::to_string(qp.config().architecture),
                                      cr::to_string(cp.config().architecture));
        const auto ev = cr::evaluate_router(name, cr::predict_matrix(qp, parts.test, reps),
                                            cr::predict_matrix(cp, parts.test, reps), parts.test, config, strongest);
        std::filesystem::create_directories(sweep_out);
        cr::save_trace(ev.sweep.trace, std::filesystem::path(sweep_out) / "trace.jsonl");
        json points = json::array();
        for (const auto& p : ev.sweep.points) points.push_back(cr::to_json(p));
        const json out{{"name", ev.name},
                       {"strongest_model", strongest},
                       {"pool", parts.test.pool()},
                       {"sweep", points},
                       {"metrics", cr::to_json(ev.metrics)}};
        write_file((std::filesystem::path(sweep_out) / "sweep.json").string(), out.dump(2) + "\n");
        fmt::print("{}\n", cr::to_json(ev.metrics).dump(2));
      });
    } else if (*eval) {
      in_stage("eval", [&] {
        const auto trace = cr::load_trace(eval_trace);
        const auto m = cr::evaluate_trace(trace, eval_strongest, eval_absolute);
        fmt::print("{}\n", cr::to_json(m).dump(2));
      });
    } else if (*route) {
      const auto config = in_stage("config", [&] { return resolve_config(route_common); });
      in_stage("route", [&] {
        const auto qp = cr::load_predictor(route_q);
        const auto cp = cr::load_predictor(route_c);
        if (qp.pool() != cp.pool()) throw std::invalid_argument("quality and cost predictors have different pools");
        std::vector<double> x;
        for (const auto& item : split_list(route_embedding)) x.push_back(std::stod(item));
        if (x.size() != qp.query_dim()) {
          throw std::invalid_argument(fmt::format("embedding has {} entries, predictor expects {}", x.size(), qp.query_dim()));
        }
        cr::Matrix q = Eigen::Map<const cr::Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
        if (config.normalize) {
          const double norm = q.norm();
          if (!(norm > 0.0) || !std::isfinite(norm)) throw std::invalid_argument("zero or non-finite embedding");
          q /= norm;
        }
        cr::Matrix rep_matrix;
        if (!route_reps.empty()) rep_matrix = cr::representation_matrix(cr::load_representations(route_reps), qp.pool());
        const cr::Matrix s = qp.predict(q, rep_matrix);
        const cr::Matrix c = cp.predict(q, rep_matrix);
        const cr::RewardSpec spec{config.reward, route_lambda};
        auto d = cr::route({s.data(), static_cast<std::size_t>(s.size())}, {c.data(), static_cast<std::size_t>(c.size())},
                           spec);
        d.model_name = qp.pool()[d.model];
        const json out{{"model", d.model},
                       {"model_name", d.model_name},
                       {"lambda", route_lambda},
                       {"family", cr::to_string(config.reward)},
                       {"rewards", d.rewards},
                       {"predicted_quality", d.quality},
                       {"predicted_cost", d.cost}};
        fmt::print("{}\n", out.dump());
      });
    } else if (*report) {
      in_stage("report", [&] {
        const auto path = std::filesystem::path(report_dir) / "report.txt";
        std::ifstream in(path);
        if (!in) throw std::runtime_error(fmt::format("no report in '{}'", report_dir));
        std::cout << in.rdbuf();
      });
    } else if (*run) {
      auto config = in_stage("config", [&] { return resolve_config(run_common, run_out); });
      if (run_ablation) config.ablation.enabled = true;
      const auto result = cr::run_experiment(config);
      std::cout << cr::format_report_table(result, config);
      fmt::print("\noutputs in {}\n", config.output_dir.string());
    }
  } catch (const cr::StageError& e) {
    fmt::print(stderr, "costroute: error in {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "costroute: error: {}\n", e.what());
    return 1;
  }
  return 0;
}
