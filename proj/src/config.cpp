#include "nano/config.hpp"

#include <stdexcept>

namespace nano {

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs}, {"lr", c.lr},     {"optimizer", c.optimizer},       {"beta1", c.beta1},
          {"beta2", c.beta2},   {"eps", c.eps},   {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

nlohmann::json to_json(const SamplingConfig& c) {
  return {{"max_len", c.max_len}, {"temperature", c.temperature}, {"top_p", c.top_p}};
}

SamplingConfig sampling_config_from_json(const nlohmann::json& j, SamplingConfig c) {
  c.max_len = j.value("max_len", c.max_len);
  c.temperature = j.value("temperature", c.temperature);
  c.top_p = j.value("top_p", c.top_p);
  c.validate();
  return c;
}

nlohmann::json to_json(const GenerationConfig& c) {
  return {{"length", c.length},
          {"k", c.k},
          {"eta", c.eta},
          {"fluency_threshold", c.fluency_threshold},
          {"sampling", to_json(c.sampling)},
          {"expansion", c.expansion == Expansion::sample ? "sample" : "enumerate_next_token"}};
}

GenerationConfig generation_config_from_json(const nlohmann::json& j, GenerationConfig c) {
  c.length = j.value("length", c.length);
  c.k = j.value("k", c.k);
  c.eta = j.value("eta", c.eta);
  c.fluency_threshold = j.value("fluency_threshold", c.fluency_threshold);
  if (j.contains("sampling")) c.sampling = sampling_config_from_json(j.at("sampling"), c.sampling);
  if (j.contains("expansion")) {
    const auto e = j.at("expansion").get<std::string>();
    if (e == "sample") {
      c.expansion = Expansion::sample;
    } else if (e == "enumerate_next_token") {
      c.expansion = Expansion::enumerate_next_token;
    } else {
      throw std::invalid_argument("generation: unknown expansion " + e);
    }
  }
  return c;
}

nlohmann::json to_json(const PretrainConfig& c) {
  return {{"train", to_json(c.train)},
          {"heldout_fraction", c.heldout_fraction},
          {"max_heldout_perplexity", c.max_heldout_perplexity}};
}

PretrainConfig pretrain_config_from_json(const nlohmann::json& j, PretrainConfig c) {
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  c.heldout_fraction = j.value("heldout_fraction", c.heldout_fraction);
  c.max_heldout_perplexity = j.value("max_heldout_perplexity", c.max_heldout_perplexity);
  return c;
}

void apply_override(nlohmann::json& target, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw std::invalid_argument("override must look like key.path=value: " + std::string(assignment));
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &target;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw std::invalid_argument("override has an empty key segment: " + key);
    if (!node->is_object()) *node = nlohmann::json::object();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

}  // namespace nano
