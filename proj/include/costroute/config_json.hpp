#pragma once

#include <json.hpp>

#include "costroute/dataset.hpp"
#include "costroute/predictors.hpp"

namespace costroute {

// JSON mappings shared by artifacts, config echoes and reports. Readers take a
// base value and only override the keys that are present; unknown keys are
// rejected.

nlohmann::json to_json(const PredictorConfig& c);
PredictorConfig predictor_config_from_json(const nlohmann::json& j, PredictorConfig base);

nlohmann::json to_json(const SplitSpec& s);
SplitSpec split_spec_from_json(const nlohmann::json& j, SplitSpec base);

nlohmann::json to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec base);

}  // namespace costroute
