#include "nano/critic.hpp"

#include "nano/log.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace nano {

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

CriticOutput to_output(const ag::Var& logits) {
  CriticOutput out;
  for (Eigen::Index j = 0; j < logits->cols(); ++j) out.scores.push_back(sigmoid(logits->value(0, j)));
  return out;
}

void require_mode(const CriticSpec& spec, CriticMode mode, const char* what) {
  if (spec.mode != mode) throw std::logic_error(std::string(what) + ": wrong critic mode");
}

void require_single_topic_size(const CriticOutput& out, int nu) {
  if (static_cast<int>(out.scores.size()) != 2 * nu - 2) throw std::invalid_argument("critic output size mismatch");
}

// Ordinal targets: output j corresponds to rating level t = j + 2.
void add_rating_targets(int r, int nu, double w, std::vector<double>& pos, std::vector<double>& neg) {
  for (int t = 2; t <= 2 * nu - 1; ++t) {
    auto j = static_cast<std::size_t>(t - 2);
    (r >= t ? pos[j] : neg[j]) += w;
  }
}

}  // namespace

std::string_view to_string(CriticMode m) { return m == CriticMode::single_topic ? "single_topic" : "distribution"; }

CriticMode critic_mode_from_string(std::string_view s) {
  if (s == "single_topic") return CriticMode::single_topic;
  if (s == "distribution") return CriticMode::distribution;
  throw std::invalid_argument("unknown critic mode: " + std::string(s));
}

CriticSpec CriticSpec::make(CriticMode mode, int nu) {
  if (nu < 2) throw std::invalid_argument("CriticSpec: nu must be > 1");
  CriticSpec s;
  s.mode = mode;
  s.nu = nu;
  const int n = nu - 1;
  for (int i = 0; i < n; ++i) {
    s.weights[nu + 1 + i] = n == 1 ? 1.0 : 0.5 + 0.5 * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return s;
}

void CriticSpec::validate() const {
  if (nu < 2) throw std::invalid_argument("CriticSpec: nu must be > 1");
  if (mode == CriticMode::distribution) return;
  double prev = 0.0;
  for (int r = nu + 1; r <= 2 * nu - 1; ++r) {
    auto it = weights.find(r);
    if (it == weights.end()) throw std::invalid_argument("CriticSpec: missing weight for rating " + std::to_string(r));
    if (!(it->second > prev)) throw std::invalid_argument("CriticSpec: weights must be positive and strictly increasing");
    prev = it->second;
  }
  if (weights.size() != static_cast<std::size_t>(nu - 1)) {
    throw std::invalid_argument("CriticSpec: weights only for ratings nu+1..2nu-1");
  }
}

nlohmann::json to_json(const CriticSpec& spec) {
  nlohmann::json w = nlohmann::json::object();
  for (const auto& [r, v] : spec.weights) w[std::to_string(r)] = v;
  return {{"mode", std::string(to_string(spec.mode))}, {"nu", spec.nu}, {"weights", w}};
}

CriticSpec critic_spec_from_json(const nlohmann::json& j) {
  const auto mode = critic_mode_from_string(j.at("mode").get<std::string>());
  const int nu = j.value("nu", 3);
  CriticSpec s = CriticSpec::make(mode, nu);
  if (j.contains("weights")) {
    s.weights.clear();
    for (const auto& [k, v] : j.at("weights").items()) s.weights[std::stoi(k)] = v.get<double>();
  }
  s.validate();
  return s;
}

Critic Critic::from_pretrained(const LMParams& pretrained, const CriticSpec& spec) {
  spec.validate();
  Critic c;
  c.spec = spec;
  c.backbone = pretrained.clone();
  c.head_w = ag::leaf(Matrix::Zero(pretrained.config.d_model, spec.outputs()), true);
  c.head_b = ag::leaf(Matrix::Zero(1, spec.outputs()), true);
  return c;
}

std::vector<ag::Var> Critic::trainable() const {
  auto out = backbone.trainable();
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

namespace {
ag::Var head(const Critic& critic, const ag::Var& embeddings) {
  auto bb = run_backbone(critic.backbone, embeddings, nullptr);
  return ag::add_row(ag::matmul(ag::mean_rows(bb.hidden), critic.head_w), critic.head_b);
}
}  // namespace

ag::Var critic_logits_hard(const Critic& critic, std::span<const TokenId> ids) {
  if (ids.empty()) throw std::invalid_argument("critic: empty sequence");
  return head(critic, embed_tokens(critic.backbone, ids));
}

ag::Var critic_logits_soft(const Critic& critic, std::span<const TokenId> prefix, const ag::Var& dists) {
  if (dists->cols() != critic.backbone.config.vocab_size) {
    throw std::invalid_argument("critic: distribution width does not match vocabulary");
  }
  ag::Var expected = ag::matmul(dists, critic.backbone.tok_emb);
  if (prefix.empty()) return head(critic, expected);
  if (dists->rows() == 0) return head(critic, embed_tokens(critic.backbone, prefix));
  return head(critic, ag::concat_rows(embed_tokens(critic.backbone, prefix), expected));
}

CriticOutput critic_forward_hard(const Critic& critic, const Sequence& seq) {
  ag::NoGradGuard no_grad;
  return to_output(critic_logits_hard(critic, seq.ids));
}

CriticOutput critic_forward_soft(const Critic& critic, const Sequence& prefix, const Matrix& dists) {
  ag::NoGradGuard no_grad;
  return to_output(critic_logits_soft(critic, prefix.ids, ag::constant(dists)));
}

double rating_loss(const CriticOutput& out, int r, int nu) {
  check_rating(r, nu);
  require_single_topic_size(out, nu);
  double loss = 0.0;
  for (int t = 2; t <= 2 * nu - 1; ++t) {
    const double p = out.scores[static_cast<std::size_t>(t - 2)];
    loss -= r >= t ? std::log(p) : std::log1p(-p);
  }
  return loss;
}

double generation_loss_single_topic(const CriticOutput& out, const CriticSpec& spec) {
  require_mode(spec, CriticMode::single_topic, "generation_loss_single_topic");
  double loss = 0.0;
  for (const auto& [r, w] : spec.weights) loss += w * rating_loss(out, r, spec.nu);
  return loss;
}

double distribution_loss(const CriticOutput& out, int r, int nu) {
  const double c = c_factor(r, nu);
  if (out.scores.size() != 1) throw std::invalid_argument("critic output size mismatch");
  const double p = std::clamp(out.scores[0], kDistributionClampLo, kDistributionClampHi);
  return -c * std::log(p);
}

double generation_loss(const CriticOutput& out, const CriticSpec& spec) {
  return spec.mode == CriticMode::single_topic ? generation_loss_single_topic(out, spec)
                                               : distribution_loss(out, max_rating(spec.nu), spec.nu);
}

ag::Var rating_loss(const ag::Var& logits, int r, int nu) {
  check_rating(r, nu);
  std::vector<double> pos(static_cast<std::size_t>(2 * nu - 2), 0.0), neg(pos.size(), 0.0);
  add_rating_targets(r, nu, 1.0, pos, neg);
  return ag::weighted_bce(logits, pos, neg);
}

ag::Var distribution_loss(const ag::Var& logits, int r, int nu) {
  const double pos[1] = {c_factor(r, nu)};
  const double neg[1] = {0.0};
  return ag::weighted_bce(logits, pos, neg, kDistributionClampLo, kDistributionClampHi);
}

ag::Var training_loss(const ag::Var& logits, int r, const CriticSpec& spec) {
  return spec.mode == CriticMode::single_topic ? rating_loss(logits, r, spec.nu) : distribution_loss(logits, r, spec.nu);
}

ag::Var generation_loss(const ag::Var& logits, const CriticSpec& spec) {
  if (spec.mode == CriticMode::distribution) return distribution_loss(logits, max_rating(spec.nu), spec.nu);
  std::vector<double> pos(static_cast<std::size_t>(2 * spec.nu - 2), 0.0), neg(pos.size(), 0.0);
  for (const auto& [r, w] : spec.weights) add_rating_targets(r, spec.nu, w, pos, neg);
  return ag::weighted_bce(logits, pos, neg);
}

double mean_critic_loss(const Critic& critic, std::span<const RatedSample> dataset) {
  if (dataset.empty()) return 0.0;
  ag::NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& s : dataset) total += training_loss(critic_logits_hard(critic, s.seq.ids), s.rating, critic.spec)->value(0, 0);
  return total / static_cast<double>(dataset.size());
}

CriticTrainResult train_critic(std::span<const RatedSample> dataset, const CriticSpec& spec, const TrainConfig& cfg,
                               const LMParams& pretrained) {
  if (dataset.empty()) throw std::invalid_argument("train_critic: empty dataset");
  cfg.validate();
  spec.validate();
  std::set<int> classes;
  for (const auto& s : dataset) {
    check_rating(s.rating, spec.nu);
    classes.insert(s.rating);
  }
  if (classes.size() == 1) warn("train_critic: dataset holds a single rating class");

  const auto t0 = std::chrono::steady_clock::now();
  CriticTrainResult result{Critic::from_pretrained(pretrained, spec), {}, 0.0};
  AdamW opt(result.critic.trainable(), cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < idx.size(); b += bs) {
      const std::size_t e = std::min(idx.size(), b + bs);
      opt.zero_grad();
      for (std::size_t i = b; i < e; ++i) {
        const auto& s = dataset[idx[i]];
        auto loss = training_loss(critic_logits_hard(result.critic, s.seq.ids), s.rating, spec);
        total += loss->value(0, 0);
        ag::backward(ag::scale(loss, 1.0 / static_cast<double>(e - b)));
      }
      opt.step();
    }
    result.epoch_loss.push_back(total / static_cast<double>(dataset.size()));
  }
  result.duration_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

Checkpoint critic_checkpoint(const Critic& critic, const Vocab& vocab) {
  Checkpoint c = lm_checkpoint(critic.backbone, vocab);
  c.kind = "critic";
  c.extra["critic_spec"] = to_json(critic.spec);
  c.tensors.emplace_back("head.w", critic.head_w->value);
  c.tensors.emplace_back("head.b", critic.head_b->value);
  return c;
}

Critic critic_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "critic") throw CheckpointError("checkpoint: expected a critic checkpoint, got " + ckpt.kind);
  Critic c;
  c.spec = critic_spec_from_json(ckpt.extra.at("critic_spec"));
  c.backbone = lm_from_checkpoint(ckpt);
  c.head_w = ag::leaf(ckpt.tensor("head.w"), true);
  c.head_b = ag::leaf(ckpt.tensor("head.b"), true);
  if (c.head_w->cols() != c.spec.outputs()) throw CheckpointError("checkpoint: critic head does not match its mode");
  return c;
}

void save_critic(const std::filesystem::path& path, const Critic& critic, const Vocab& vocab) {
  write_file_atomic(path, encode_checkpoint(critic_checkpoint(critic, vocab)));
}

Critic load_critic(const std::filesystem::path& path) { return critic_from_checkpoint(decode_checkpoint(read_file_bytes(path))); }

std::string critic_hash(const Critic& critic, const Vocab& vocab) {
  return content_hash(encode_checkpoint(critic_checkpoint(critic, vocab)));
}

void share_embedding(Critic& critic, const LMParams& lm) {
  if (critic.backbone.tok_emb->value != lm.tok_emb->value) {
    throw std::invalid_argument("share_embedding: embedding tables differ");
  }
  critic.backbone.tok_emb = lm.tok_emb;
}

}  // namespace nano
