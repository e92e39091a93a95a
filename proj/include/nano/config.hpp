#pragma once

// JSON forms of the tunable configs. Readers start from the defaults and take
// whatever keys are present, so partial config files are fine.

#include "nano/decoder.hpp"
#include "nano/optim.hpp"
#include "nano/pretrain.hpp"

#include "json.hpp"

#include <string_view>

namespace nano {

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base);

nlohmann::json to_json(const SamplingConfig& c);
SamplingConfig sampling_config_from_json(const nlohmann::json& j, SamplingConfig base = {});

nlohmann::json to_json(const GenerationConfig& c);
GenerationConfig generation_config_from_json(const nlohmann::json& j, GenerationConfig base = {});

nlohmann::json to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j, PretrainConfig base = PretrainConfig::defaults());

// Applies "a.b.c=value" to `target`. The value is parsed as JSON when it can
// be (numbers, booleans, arrays), otherwise taken as a string.
void apply_override(nlohmann::json& target, std::string_view assignment);

}  // namespace nano
