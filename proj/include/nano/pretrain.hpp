#pragma once

#include "nano/lm.hpp"
#include "nano/optim.hpp"

namespace nano {

// Positions t whose token is scored: t in [max(prompt_len, 1), size()).
std::size_t first_scored_position(const Sequence& seq);

// Summed negative log-likelihood of the completion tokens (graph-building).
ag::Var completion_nll(const LMParams& lm, const Sequence& seq);

// exp(mean NLL per completion token). Sequences without completion tokens
// are skipped with a warning; throws if nothing is left to score.
double perplexity(const LMParams& lm, std::span<const Sequence> sequences);

struct PretrainConfig {
  TrainConfig train;
  double heldout_fraction = 0.1;
  double max_heldout_perplexity = 8.0;

  static PretrainConfig defaults();
};

struct PretrainResult {
  LMParams lm;  // embedding table frozen
  std::vector<double> epoch_loss;
  double train_perplexity = 0.0;
  double heldout_perplexity = 0.0;  // NaN when no held-out split
  bool converged = false;
};

PretrainResult pretrain(std::span<const Sequence> corpus, const LMConfig& config, const PretrainConfig& cfg);

}  // namespace nano
