#pragma once

// Critic-guided tree-search decoding.
//
// For every position after the committed prefix x: rebuild the KV state of
// x[:-1], then k times { unroll a continuation to the target length, take the
// critic's soft loss on x || p and step the KV state against its normalized
// gradient, score x || x' with the hard loss, gate it on mean dist-1..3 }.
// The next token of the best candidate at that position is committed. The
// returned sequence is the best candidate seen over the whole search.

#include "nano/critic.hpp"
#include "nano/sampling.hpp"

#include <limits>
#include <optional>

namespace nano {

// How the first token of each unrolled continuation is chosen.
enum class Expansion {
  sample,                // every token drawn from the (updated) LM
  enumerate_next_token,  // candidate j forces token j % |V|, the rest is drawn
};

struct GenerationConfig {
  std::size_t length = 50;  // total tokens, prompt included
  int k = 8;
  double eta = 0.02;
  double fluency_threshold = 0.3;
  SamplingConfig sampling;
  Expansion expansion = Expansion::sample;

  void validate(const LMConfig& lm) const;
};

struct Candidate {
  Sequence seq;
  double hard_loss = std::numeric_limits<double>::infinity();  // +inf iff gated
  double fluency = 0.0;                                          // mean dist-1..3
  std::size_t position = 0;                                      // index being decided
};

struct GenerationResult {
  Sequence seq;
  std::vector<Candidate> candidates;   // in recording order
  std::vector<std::size_t> committed;  // candidate index behind each committed token
  int position_fallbacks = 0;          // positions where every candidate was gated
  bool returned_fallback = false;      // no finite candidate at all
  int skipped_updates = 0;             // non-finite gradients
  bool controlled = false;             // false: plain sampling (no critic)
};

GenerationResult generate_controlled(const Sequence& prompt, const LMParams& lm, const Critic* critic,
                                     const GenerationConfig& cfg, Rng& rng);

// Critic soft loss on x || p, with p the LM's distributions along the
// continuation `cont` of x when decoding from h (the state of x[:-1]).
// Differentiable w.r.t. the leaves of h.
ag::Var soft_loss(const LMParams& lm, const Critic& critic, const Sequence& x, const Sequence& cont, const KVState& h);

// Distinct n-grams over total n-grams; 1.0 when the sequence is shorter than n.
double dist_n(std::span<const TokenId> ids, int n);
double mean_dist123(std::span<const TokenId> ids);

// Scales every tensor to unit Frobenius norm (zero tensors stay zero).
// Returns nullopt when any entry is NaN or infinite.
std::optional<std::vector<Matrix>> normalize_gradient(std::vector<Matrix> grads);

}  // namespace nano
