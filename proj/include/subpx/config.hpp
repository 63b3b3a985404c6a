#pragma once

#include "json.hpp"
#include "subpx/evaluation.hpp"
#include "subpx/ransac.hpp"
#include "subpx/refine_net.hpp"
#include "subpx/synthetic.hpp"
#include "subpx/trainer.hpp"

namespace subpx {

// JSON forms of the configuration structs. Parsing starts from the
// defaults, so any subset of keys may be given; unknown keys are rejected.
nlohmann::json to_json(const SceneConfig& c);
nlohmann::json to_json(const RefineConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RansacConfig& c);
nlohmann::json to_json(const EvalConfig& c);

void from_json(const nlohmann::json& j, SceneConfig& c);
void from_json(const nlohmann::json& j, RefineConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void from_json(const nlohmann::json& j, RansacConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

}  // namespace subpx
