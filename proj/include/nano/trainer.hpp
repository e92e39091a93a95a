#pragma once

// Generator fine-tuning with the complementary loss.
//
// Positive/neutral ratings push towards the observed token; negative ratings
// push towards the model's own distribution with the observed token removed.
// Both are scaled by kappa = |r - nu| / (nu - 1).

#include "nano/feedback.hpp"
#include "nano/lm.hpp"
#include "nano/optim.hpp"

#include <optional>

namespace nano {

// Degenerate renormalization threshold: negative positions with
// p(x_i) >= 1 - mass are skipped.
inline constexpr double kDegenerateMass = 1e-9;

// nullopt when r < nu and p(x_i) >= 1 - degenerate_mass.
std::optional<RowVector> complementary_target(const RowVector& p, TokenId x_i, int r, int nu,
                                              double degenerate_mass = kDegenerateMass);

struct ComplementaryLoss {
  ag::Var loss;               // 1x1, mean over completion positions
  std::size_t positions = 0;  // completion positions in the sequence
  std::size_t skipped = 0;    // degenerate positions left out
};

// Averaged over completion (non-prompt) positions. With `complementary` off,
// negative ratings contribute nothing (plain NLL on positives only).
ComplementaryLoss complementary_loss(const Sequence& seq, int r, const LMParams& lm, int nu,
                                     bool complementary = true, double degenerate_mass = kDegenerateMass);
double complementary_loss_value(const Sequence& seq, int r, const LMParams& lm, int nu);

struct GeneratorTrainResult {
  LMParams lm;
  std::vector<double> epoch_loss;
  double duration_ms = 0.0;
  std::size_t dataset_size = 0;
  std::size_t skipped_positions = 0;  // per epoch
};

// Re-initializes from `pretrained` (embedding shared and frozen) and trains on
// the whole dataset.
GeneratorTrainResult train_generator(std::span<const RatedSample> dataset, const TrainConfig& cfg,
                                     const LMParams& pretrained, int nu, bool complementary = true,
                                     double degenerate_mass = kDegenerateMass);

}  // namespace nano
