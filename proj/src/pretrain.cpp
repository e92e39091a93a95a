#include "nano/pretrain.hpp"

#include "nano/log.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace nano {

std::size_t first_scored_position(const Sequence& seq) { return std::max<std::size_t>(seq.prompt_len, 1); }

ag::Var completion_nll(const LMParams& lm, const Sequence& seq) {
  const std::size_t first = first_scored_position(seq);
  if (seq.size() <= first) return ag::constant(Matrix::Zero(1, 1));
  const auto inputs = std::span(seq.ids).first(seq.size() - 1);
  auto out = forward_logits(lm, inputs, nullptr);
  Matrix targets = Matrix::Zero(static_cast<Eigen::Index>(inputs.size()), lm.config.vocab_size);
  std::vector<double> weights(inputs.size(), 0.0);
  for (std::size_t t = first; t < seq.size(); ++t) {
    targets(static_cast<Eigen::Index>(t - 1), seq.ids[t]) = 1.0;
    weights[t - 1] = 1.0;
  }
  return ag::soft_cross_entropy(out.logits, targets, weights);
}

double perplexity(const LMParams& lm, std::span<const Sequence> sequences) {
  ag::NoGradGuard no_grad;
  double nll = 0.0;
  std::size_t tokens = 0;
  std::size_t skipped = 0;
  for (const auto& seq : sequences) {
    const std::size_t first = first_scored_position(seq);
    if (seq.size() <= first) {
      ++skipped;
      continue;
    }
    nll += completion_nll(lm, seq)->value(0, 0);
    tokens += seq.size() - first;
  }
  if (skipped > 0) warn("perplexity: skipped " + std::to_string(skipped) + " sequence(s) with empty completion");
  if (tokens == 0) throw std::invalid_argument("perplexity: no completion tokens to score");
  return std::exp(nll / static_cast<double>(tokens));
}

PretrainConfig PretrainConfig::defaults() {
  PretrainConfig c;
  c.train.epochs = 8;
  c.train.lr = 3e-3;
  c.train.batch_size = 16;
  c.train.weight_decay = 0.0;
  return c;
}

PretrainResult pretrain(std::span<const Sequence> corpus, const LMConfig& config, const PretrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  cfg.train.validate();
  for (const auto& s : corpus) {
    if (s.size() > static_cast<std::size_t>(config.context)) throw ContextLengthError("pretrain: sentence exceeds context");
    for (TokenId t : s.ids) {
      if (t < 0 || t >= config.vocab_size) throw std::out_of_range("pretrain: token outside vocabulary");
    }
  }

  std::mt19937_64 rng(cfg.train.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_heldout = static_cast<std::size_t>(std::floor(cfg.heldout_fraction * static_cast<double>(corpus.size())));
  std::vector<Sequence> heldout, train;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_heldout ? heldout : train).push_back(corpus[order[i]]);

  PretrainResult result{LMParams::init(config, cfg.train.seed ^ 0x9e3779b97f4a7c15ull), {}, 0.0, 0.0, false};
  AdamW opt(result.lm.trainable(), cfg.train);
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(cfg.train.batch_size)) {
      const std::size_t e = std::min(idx.size(), b + static_cast<std::size_t>(cfg.train.batch_size));
      std::size_t tokens = 0;
      for (std::size_t i = b; i < e; ++i) tokens += train[idx[i]].size() - first_scored_position(train[idx[i]]);
      if (tokens == 0) continue;
      opt.zero_grad();
      for (std::size_t i = b; i < e; ++i) {
        auto nll = completion_nll(result.lm, train[idx[i]]);
        epoch_nll += nll->value(0, 0);
        ag::backward(ag::scale(nll, 1.0 / static_cast<double>(tokens)));
      }
      epoch_tokens += tokens;
      opt.step();
    }
    result.epoch_loss.push_back(epoch_tokens ? epoch_nll / static_cast<double>(epoch_tokens) : 0.0);
  }

  result.lm.freeze_embedding();
  result.train_perplexity = perplexity(result.lm, train);
  result.heldout_perplexity = heldout.empty() ? std::numeric_limits<double>::quiet_NaN() : perplexity(result.lm, heldout);
  const double judged = heldout.empty() ? result.train_perplexity : result.heldout_perplexity;
  result.converged = judged < cfg.max_heldout_perplexity;
  if (!result.converged) {
    warn("pretrain: perplexity " + std::to_string(judged) + " above threshold " +
         std::to_string(cfg.max_heldout_perplexity));
  }
  return result;
}

}  // namespace nano
