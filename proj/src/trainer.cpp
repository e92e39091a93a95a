#include "nano/trainer.hpp"

#include "nano/log.hpp"
#include "nano/pretrain.hpp"

#include <chrono>
#include <numeric>
#include <random>

namespace nano {

std::optional<RowVector> complementary_target(const RowVector& p, TokenId x_i, int r, int nu,
                                              double degenerate_mass) {
  check_rating(r, nu);
  if (x_i < 0 || x_i >= p.size()) throw std::out_of_range("complementary_target: token outside distribution");
  RowVector q = RowVector::Zero(p.size());
  if (r >= nu) {
    q(x_i) = 1.0;
    return q;
  }
  const double rest = 1.0 - p(x_i);
  if (rest <= degenerate_mass) return std::nullopt;
  q = p / rest;
  q(x_i) = 0.0;
  return q;
}

ComplementaryLoss complementary_loss(const Sequence& seq, int r, const LMParams& lm, int nu, bool complementary,
                                     double degenerate_mass) {
  const double k = kappa(r, nu);
  ComplementaryLoss out;
  const std::size_t first = first_scored_position(seq);
  if (seq.size() <= first) throw std::invalid_argument("complementary_loss: no completion tokens");
  out.positions = seq.size() - first;
  if (k == 0.0 || (!complementary && r < nu)) {
    out.loss = ag::constant(Matrix::Zero(1, 1));
    return out;
  }

  const auto inputs = std::span(seq.ids).first(seq.size() - 1);
  auto fwd = forward_logits(lm, inputs, nullptr);
  const Matrix probs = r < nu ? softmax(fwd.logits->value) : Matrix();
  Matrix targets = Matrix::Zero(static_cast<Eigen::Index>(inputs.size()), lm.config.vocab_size);
  std::vector<double> weights(inputs.size(), 0.0);
  const double w = k / static_cast<double>(out.positions);
  for (std::size_t t = first; t < seq.size(); ++t) {
    const auto row = static_cast<Eigen::Index>(t - 1);
    if (r >= nu) {
      targets(row, seq.ids[t]) = 1.0;
    } else {
      auto q = complementary_target(probs.row(row), seq.ids[t], r, nu, degenerate_mass);
      if (!q) {
        ++out.skipped;
        continue;
      }
      targets.row(row) = *q;
    }
    weights[t - 1] = w;
  }
  out.loss = ag::soft_cross_entropy(fwd.logits, targets, weights);
  return out;
}

double complementary_loss_value(const Sequence& seq, int r, const LMParams& lm, int nu) {
  ag::NoGradGuard no_grad;
  return complementary_loss(seq, r, lm, nu).loss->value(0, 0);
}

GeneratorTrainResult train_generator(std::span<const RatedSample> dataset, const TrainConfig& cfg,
                                     const LMParams& pretrained, int nu, bool complementary,
                                     double degenerate_mass) {
  if (dataset.empty()) throw std::invalid_argument("train_generator: empty dataset");
  cfg.validate();
  if (!pretrained.embedding_frozen()) throw std::invalid_argument("train_generator: embedding table must be frozen");
  bool any_signal = false;
  for (const auto& s : dataset) {
    check_rating(s.rating, nu);
    any_signal = any_signal || (s.rating != nu && (complementary || s.rating > nu));
  }
  if (!any_signal) warn("train_generator: no sample carries a gradient (all neutral)");

  const auto t0 = std::chrono::steady_clock::now();
  GeneratorTrainResult result{pretrained.clone(), {}, 0.0, dataset.size(), 0};
  AdamW opt(result.lm.trainable(), cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double total = 0.0;
    std::size_t skipped = 0;
    for (std::size_t b = 0; b < idx.size(); b += bs) {
      const std::size_t e = std::min(idx.size(), b + bs);
      opt.zero_grad();
      for (std::size_t i = b; i < e; ++i) {
        const auto& s = dataset[idx[i]];
        auto l = complementary_loss(s.seq, s.rating, result.lm, nu, complementary, degenerate_mass);
        skipped += l.skipped;
        total += l.loss->value(0, 0);
        ag::backward(ag::scale(l.loss, 1.0 / static_cast<double>(e - b)));
      }
      opt.step();
    }
    result.epoch_loss.push_back(total / static_cast<double>(dataset.size()));
    result.skipped_positions = skipped;
  }
  if (result.skipped_positions > 0) {
    warn("train_generator: skipped " + std::to_string(result.skipped_positions) +
         " degenerate negative position(s) per epoch");
  }
  result.duration_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace nano
