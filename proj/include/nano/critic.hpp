#pragma once

// Critic network: a transformer backbone sharing the generator's frozen token
// embedding table, mean-pooled into a linear head of independent sigmoids.
//
// single_topic: 2nu-2 outputs, output j scores P(target rating >= j + 2).
// distribution: one output, P(attribute | x).

#include "nano/checkpoint.hpp"
#include "nano/feedback.hpp"
#include "nano/lm.hpp"
#include "nano/optim.hpp"

#include <filesystem>
#include <map>

namespace nano {

enum class CriticMode { single_topic, distribution };
std::string_view to_string(CriticMode m);
CriticMode critic_mode_from_string(std::string_view s);

struct CriticSpec {
  CriticMode mode = CriticMode::single_topic;
  int nu = 3;
  std::map<int, double> weights;  // rating nu+1..2nu-1 -> generation weight

  // Weights linearly spaced over 0.5..1.0 on the positive ratings.
  static CriticSpec make(CriticMode mode, int nu = 3);

  int outputs() const { return mode == CriticMode::single_topic ? 2 * nu - 2 : 1; }
  void validate() const;
  bool operator==(const CriticSpec&) const = default;
};

nlohmann::json to_json(const CriticSpec& spec);
CriticSpec critic_spec_from_json(const nlohmann::json& j);

struct CriticOutput {
  std::vector<double> scores;  // sigmoid outputs
};

// Clamp applied to p(a|x) in the distribution loss.
inline constexpr double kDistributionClampLo = 1e-6;
inline constexpr double kDistributionClampHi = 1.0 - 1e-6;

struct Critic {
  CriticSpec spec;
  LMParams backbone;
  ag::Var head_w;  // d_model x outputs
  ag::Var head_b;  // 1 x outputs

  // Backbone cloned from the pretrained LM (frozen embedding shared), zero head.
  static Critic from_pretrained(const LMParams& pretrained, const CriticSpec& spec);

  std::vector<ag::Var> trainable() const;
};

ag::Var critic_logits_hard(const Critic& critic, std::span<const TokenId> ids);
// Prefix rows use exact token embeddings; each row of `dists` contributes the
// expected embedding sum_v p(v) E[v].
ag::Var critic_logits_soft(const Critic& critic, std::span<const TokenId> prefix, const ag::Var& dists);

CriticOutput critic_forward_hard(const Critic& critic, const Sequence& seq);
CriticOutput critic_forward_soft(const Critic& critic, const Sequence& prefix, const Matrix& dists);

// Plain-value losses over a CriticOutput.
double rating_loss(const CriticOutput& out, int r, int nu);
double generation_loss_single_topic(const CriticOutput& out, const CriticSpec& spec);
double distribution_loss(const CriticOutput& out, int r, int nu);
double generation_loss(const CriticOutput& out, const CriticSpec& spec);

// Graph-building versions over head logits.
ag::Var rating_loss(const ag::Var& logits, int r, int nu);
ag::Var distribution_loss(const ag::Var& logits, int r, int nu);
ag::Var training_loss(const ag::Var& logits, int r, const CriticSpec& spec);
ag::Var generation_loss(const ag::Var& logits, const CriticSpec& spec);

struct CriticTrainResult {
  Critic critic;
  std::vector<double> epoch_loss;  // mean training loss per epoch, measured before each update
  double duration_ms = 0.0;
};

// Re-initializes from `pretrained` and trains on the whole dataset.
CriticTrainResult train_critic(std::span<const RatedSample> dataset, const CriticSpec& spec, const TrainConfig& cfg,
                               const LMParams& pretrained);

// Mean training loss over a dataset without updating anything.
double mean_critic_loss(const Critic& critic, std::span<const RatedSample> dataset);

Checkpoint critic_checkpoint(const Critic& critic, const Vocab& vocab);
Critic critic_from_checkpoint(const Checkpoint& ckpt);
void save_critic(const std::filesystem::path& path, const Critic& critic, const Vocab& vocab);
Critic load_critic(const std::filesystem::path& path);
std::string critic_hash(const Critic& critic, const Vocab& vocab);

// Points the critic at `lm`'s frozen embedding table; the tables must match.
void share_embedding(Critic& critic, const LMParams& lm);

}  // namespace nano
