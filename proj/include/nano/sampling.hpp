#pragma once

#include "nano/lm.hpp"

#include <random>

namespace nano {

struct SamplingConfig {
  std::size_t max_len = 50;  // total length, prompt included
  double temperature = 1.0;  // <= kGreedyTemperature means argmax
  double top_p = 0.95;

  static constexpr double kGreedyTemperature = 1e-6;
  void validate() const;
};

using Rng = std::mt19937_64;

// Draws one token from a logit row under temperature + nucleus truncation.
TokenId sample_token(std::span<const double> logits, const SamplingConfig& cfg, Rng& rng);

struct SampleResult {
  Sequence seq;
  Matrix dists;  // LM distribution (temperature 1) at every sampled position
};

// Extends `seq` to cfg.max_len tokens or through the first <eos>. `state`, if
// given, must cover every id of `seq` except the last.
SampleResult sample_continuation(const LMParams& lm, const Sequence& seq, const KVState* state,
                                 const SamplingConfig& cfg, Rng& rng);

}  // namespace nano
