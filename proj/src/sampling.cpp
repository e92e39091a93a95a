#include "nano/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nano {

void SamplingConfig::validate() const {
  if (temperature < 0.0) throw std::invalid_argument("sampling: temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("sampling: top_p must be in (0, 1]");
}

TokenId sample_token(std::span<const double> logits, const SamplingConfig& cfg, Rng& rng) {
  if (logits.empty()) throw std::invalid_argument("sample_token: empty logits");
  if (cfg.temperature <= SamplingConfig::kGreedyTemperature) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp((logits[i] - m) / cfg.temperature);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& x : p) x /= total;

  std::vector<TokenId> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t keep = p.size();
  if (cfg.top_p < 1.0) {
    std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return p[a] > p[b]; });
    double cum = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      cum += p[order[i]];
      if (cum >= cfg.top_p) {
        keep = i + 1;
        break;
      }
    }
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mass += p[order[i]];
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng) * mass;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= p[order[i]];
    if (u < 0.0) return order[i];
  }
  return order[keep - 1];
}

SampleResult sample_continuation(const LMParams& lm, const Sequence& seq, const KVState* state,
                                 const SamplingConfig& cfg, Rng& rng) {
  cfg.validate();
  if (seq.ids.empty()) throw std::invalid_argument("sample_continuation: empty sequence");
  if (cfg.max_len < seq.size()) throw std::invalid_argument("sample_continuation: max_len shorter than input");
  if (cfg.max_len > static_cast<std::size_t>(lm.config.context)) {
    throw ContextLengthError("sample_continuation: max_len exceeds context");
  }
  ag::NoGradGuard no_grad;
  SampleResult out;
  out.seq = seq;
  const TokenId eos = 2;

  KVState cache;
  if (state) {
    if (static_cast<std::size_t>(state->length()) + 1 != seq.size()) {
      throw std::invalid_argument("sample_continuation: state must cover all but the last token");
    }
    cache = *state;
  } else if (seq.size() > 1) {
    cache = forward_logits(lm, std::span(seq.ids).first(seq.size() - 1), nullptr).state;
  }

  std::vector<RowVector> dists;
  TokenId last = seq.ids.back();
  while (out.seq.size() < cfg.max_len) {
    const TokenId feed[1] = {last};
    auto step = forward_logits(lm, feed, cache.empty() ? nullptr : &cache);
    cache = std::move(step.state);
    const auto& row = step.logits->value;
    dists.push_back(softmax(row).row(0));
    last = sample_token(std::span<const double>(row.data(), static_cast<std::size_t>(row.cols())), cfg, rng);
    out.seq.ids.push_back(last);
    if (last == eos) break;
  }
  out.dists.resize(static_cast<Eigen::Index>(dists.size()), lm.config.vocab_size);
  for (std::size_t i = 0; i < dists.size(); ++i) out.dists.row(static_cast<Eigen::Index>(i)) = dists[i];
  return out;
}

}  // namespace nano
