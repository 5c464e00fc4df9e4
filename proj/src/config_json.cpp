#include "costroute/config_json.hpp"

#include <initializer_list>
#include <stdexcept>
#include <string_view>

#include <fmt/format.h>

namespace costroute {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view what) {
  if (!j.is_object()) throw std::invalid_argument(fmt::format("{} must be an object", what));
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok |= key == k;
    if (!ok) throw std::invalid_argument(fmt::format("unknown key '{}' in {}", key, what));
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

json to_json(const PredictorConfig& c) {
  return json{{"architecture", to_string(c.architecture)},
              {"target", to_string(c.target)},
              {"internal_dim", c.internal_dim},
              {"hidden_dims", c.resolved_hidden_dims()},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"k", c.k}};
}

PredictorConfig predictor_config_from_json(const json& j, PredictorConfig base) {
  reject_unknown(j,
                 {"architecture", "target", "internal_dim", "hidden_dims", "learning_rate", "batch_size",
                  "weight_decay", "epochs", "seed", "k"},
                 "predictor config");
  try {
    if (auto it = j.find("architecture"); it != j.end()) {
      base.architecture = parse_architecture(it->get<std::string>());
    }
    if (auto it = j.find("target"); it != j.end()) base.target = parse_target(it->get<std::string>());
    read(j, "internal_dim", base.internal_dim);
    read(j, "hidden_dims", base.hidden_dims);
    read(j, "learning_rate", base.learning_rate);
    read(j, "batch_size", base.batch_size);
    read(j, "weight_decay", base.weight_decay);
    read(j, "epochs", base.epochs);
    read(j, "seed", base.seed);
    read(j, "k", base.k);
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("predictor config: {}", e.what()));
  }
  return base;
}

json to_json(const SplitSpec& s) {
  return json{{"train", s.train_frac}, {"val", s.val_frac}, {"test", s.test_frac}, {"seed", s.seed}};
}

SplitSpec split_spec_from_json(const json& j, SplitSpec base) {
  reject_unknown(j, {"train", "val", "test", "seed"}, "split");
  try {
    read(j, "train", base.train_frac);
    read(j, "val", base.val_frac);
    read(j, "test", base.test_frac);
    read(j, "seed", base.seed);
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("split: {}", e.what()));
  }
  return base;
}

json to_json(const SynthSpec& s) {
  return json{{"n", s.n},
              {"num_models", s.num_models},
              {"dim", s.dim},
              {"clusters", s.clusters},
              {"noise", s.noise},
              {"cluster_spread", s.cluster_spread},
              {"cost_min", s.cost_min},
              {"cost_max", s.cost_max},
              {"cost_jitter", s.cost_jitter}};
}

SynthSpec synth_spec_from_json(const json& j, SynthSpec base) {
  reject_unknown(j, {"n", "num_models", "dim", "clusters", "noise", "cluster_spread", "cost_min", "cost_max",
                     "cost_jitter", "seed"},
                 "synth spec");
  try {
    read(j, "n", base.n);
    read(j, "num_models", base.num_models);
    read(j, "dim", base.dim);
    read(j, "clusters", base.clusters);
    read(j, "noise", base.noise);
    read(j, "cluster_spread", base.cluster_spread);
    read(j, "cost_min", base.cost_min);
    read(j, "cost_max", base.cost_max);
    read(j, "cost_jitter", base.cost_jitter);
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("synth spec: {}", e.what()));
  }
  return base;
}

}  // namespace costroute
