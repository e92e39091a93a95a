#pragma once

#include "nano/autograd.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nano {

// Optimizer + schedule knobs for one training job.
struct TrainConfig {
  int epochs = 3;
  double lr = 5e-5;
  std::string optimizer = "adamw";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int batch_size = 8;
  std::uint64_t seed = 0;

  // Fine-tuning defaults for the generator and the critic (Epochs 3 / 5,
  // AdamW, lr 5e-5, betas (0.9, 0.999), eps 1e-8).
  static TrainConfig generator_defaults();
  static TrainConfig critic_defaults();

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// AdamW with decoupled weight decay and bias correction.
class AdamW {
 public:
  AdamW(std::vector<ag::Var> params, const TrainConfig& cfg);

  void zero_grad();
  // Parameters without a gradient are skipped (their moments are untouched).
  void step();
  long steps() const { return t_; }

 private:
  std::vector<ag::Var> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
};

}  // namespace nano
