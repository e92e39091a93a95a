#include "nano/decoder.hpp"

#include "nano/log.hpp"

#include <cmath>
#include <set>

namespace nano {

void GenerationConfig::validate(const LMConfig& lm) const {
  if (length > static_cast<std::size_t>(lm.context)) throw ContextLengthError("generation: length exceeds context");
  if (k < 1) throw std::invalid_argument("generation: k must be >= 1");
  if (eta < 0.0) throw std::invalid_argument("generation: eta must be >= 0");
  if (fluency_threshold < 0.0 || fluency_threshold > 1.0) {
    throw std::invalid_argument("generation: fluency threshold must be in [0, 1]");
  }
  sampling.validate();
}

double dist_n(std::span<const TokenId> ids, int n) {
  if (n < 1) throw std::invalid_argument("dist_n: n must be >= 1");
  const auto un = static_cast<std::size_t>(n);
  if (ids.size() < un) {
    warn("dist_n: sequence shorter than n, returning 1.0");
    return 1.0;
  }
  std::set<std::vector<TokenId>> seen;
  const std::size_t total = ids.size() - un + 1;
  for (std::size_t i = 0; i < total; ++i) seen.emplace(ids.begin() + i, ids.begin() + i + un);
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

double mean_dist123(std::span<const TokenId> ids) { return (dist_n(ids, 1) + dist_n(ids, 2) + dist_n(ids, 3)) / 3.0; }

std::optional<std::vector<Matrix>> normalize_gradient(std::vector<Matrix> grads) {
  for (auto& g : grads) {
    if (!g.allFinite()) return std::nullopt;
    const double norm = g.norm();
    if (norm > 0.0) g /= norm;
  }
  return grads;
}

namespace {

Critic inference_copy(const Critic& c) {
  Critic out;
  out.spec = c.spec;
  out.backbone = c.backbone.frozen_copy();
  out.head_w = ag::leaf(c.head_w->value, false);
  out.head_b = ag::leaf(c.head_b->value, false);
  return out;
}

double hard_loss(const Critic& critic, const Sequence& seq) {
  return generation_loss(critic_forward_hard(critic, seq), critic.spec);
}

// One continuation of x from the state h (which covers x[:-1]).
Sequence unroll(const LMParams& lm, const Sequence& x, const KVState& h, const GenerationConfig& cfg, int j,
                Rng& rng) {
  SamplingConfig sc = cfg.sampling;
  sc.max_len = cfg.length;
  if (cfg.expansion == Expansion::sample) return sample_continuation(lm, x, h.empty() ? nullptr : &h, sc, rng).seq;

  ag::NoGradGuard no_grad;
  const TokenId feed[1] = {x.ids.back()};
  auto first = forward_logits(lm, feed, h.empty() ? nullptr : &h);
  Sequence forced = x;
  forced.ids.push_back(static_cast<TokenId>(j % lm.config.vocab_size));
  if (forced.ids.back() == 2 || forced.size() >= cfg.length) return forced;
  return sample_continuation(lm, forced, &first.state, sc, rng).seq;
}

std::size_t pick(const std::vector<Candidate>& cands, std::size_t begin, bool& fell_back) {
  std::size_t best = cands.size();
  for (std::size_t c = begin; c < cands.size(); ++c) {
    if (std::isfinite(cands[c].hard_loss) && (best == cands.size() || cands[c].hard_loss < cands[best].hard_loss)) {
      best = c;
    }
  }
  fell_back = best == cands.size();
  if (!fell_back) return best;
  best = begin;
  for (std::size_t c = begin; c < cands.size(); ++c) {
    if (cands[c].fluency > cands[best].fluency) best = c;
  }
  return best;
}

}  // namespace

ag::Var soft_loss(const LMParams& lm, const Critic& critic, const Sequence& x, const Sequence& cont, const KVState& h) {
  if (x.ids.empty() || cont.size() <= x.size()) throw std::invalid_argument("soft_loss: continuation must extend x");
  if (h.length() + 1 != static_cast<Eigen::Index>(x.size())) throw std::invalid_argument("soft_loss: state must cover x[:-1]");
  std::vector<TokenId> feed(cont.ids.begin() + static_cast<std::ptrdiff_t>(x.size()) - 1, cont.ids.end() - 1);
  auto out = forward_logits(lm, feed, h.empty() ? nullptr : &h);
  ag::Var dists = ag::softmax_rows(out.logits);
  return generation_loss(critic_logits_soft(critic, x.ids, dists), critic.spec);
}

GenerationResult generate_controlled(const Sequence& prompt, const LMParams& lm, const Critic* critic,
                                     const GenerationConfig& cfg, Rng& rng) {
  cfg.validate(lm.config);
  if (prompt.ids.empty()) throw std::invalid_argument("generate_controlled: empty prompt");
  GenerationResult result;
  if (critic == nullptr) {
    SamplingConfig sc = cfg.sampling;
    sc.max_len = std::max(cfg.length, prompt.size());
    result.seq = sample_continuation(lm, prompt, nullptr, sc, rng).seq;
    return result;
  }
  if (critic->backbone.config.vocab_size != lm.config.vocab_size) {
    throw std::invalid_argument("generate_controlled: critic and generator vocabularies differ");
  }
  result.controlled = true;

  const LMParams frozen_lm = lm.frozen_copy();
  const Critic frozen_critic = inference_copy(*critic);
  const TokenId eos = 2;

  Sequence x = prompt;
  while (x.size() < cfg.length && x.ids.back() != eos) {
    KVState h;
    if (x.size() > 1) h = forward(frozen_lm, std::span(x.ids).first(x.size() - 1)).state.detached(true);

    const std::size_t begin = result.candidates.size();
    for (int j = 0; j < cfg.k; ++j) {
      Candidate cand;
      cand.seq = unroll(frozen_lm, x, h, cfg, j, rng);
      cand.position = x.size();

      if (!h.empty() && cfg.eta > 0.0) {
        auto loss = soft_loss(frozen_lm, frozen_critic, x, cand.seq, h);
        ag::backward(loss);
        auto step = normalize_gradient(h.gradients());
        for (auto& l : h.layers) {
          l.k->zero_grad();
          l.v->zero_grad();
        }
        if (step) {
          h.apply_delta(*step, cfg.eta);
        } else {
          ++result.skipped_updates;
          warn("generate_controlled: non-finite state gradient, update skipped");
        }
      }

      cand.fluency = mean_dist123(cand.seq.ids);
      cand.hard_loss = cand.fluency < cfg.fluency_threshold ? std::numeric_limits<double>::infinity()
                                                           : hard_loss(frozen_critic, cand.seq);
      result.candidates.push_back(std::move(cand));
    }

    bool fell_back = false;
    const std::size_t chosen = pick(result.candidates, begin, fell_back);
    if (fell_back) ++result.position_fallbacks;
    x.ids.push_back(result.candidates[chosen].seq.ids[x.size()]);
    result.committed.push_back(chosen);
  }

  if (result.candidates.empty()) {
    result.seq = x;
    return result;
  }
  const std::size_t best = pick(result.candidates, 0, result.returned_fallback);
  result.seq = result.candidates[best].seq;
  return result;
}

}  // namespace nano
