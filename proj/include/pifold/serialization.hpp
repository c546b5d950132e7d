#pragma once

// JSON forms of the configuration and report types. Unknown keys are
// rejected so a typo in a config file never passes silently.

#include "json.hpp"
#include "pifold/graph.hpp"
#include "pifold/model.hpp"
#include "pifold/train.hpp"

namespace pifold {

void to_json(nlohmann::json& j, const FeatureFamilies& f);
void from_json(const nlohmann::json& j, FeatureFamilies& f);
void to_json(nlohmann::json& j, const FeatureConfig& c);
void from_json(const nlohmann::json& j, FeatureConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EvalOptions& o);
void to_json(nlohmann::json& j, const EvalReport& r);

// Throws kInvalidArgument naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const char* what);

}  // namespace pifold
