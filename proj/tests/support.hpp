#pragma once

#include "nano/log.hpp"
#include "nano/session.hpp"

#include <functional>
#include <string>
#include <vector>

namespace nano::test {

// Small two-topic world (space/sports at 50/50), pretrained once per process.
inline const BuiltWorld& tiny_world() {
  static const BuiltWorld w = [] {
    WorldSpec spec = WorldSpec::toy(0.5);
    spec.corpus.sentences = 600;
    spec.lm.d_model = 32;
    spec.lm.n_heads = 2;
    spec.pretrain.train.epochs = 6;
    return build_world(spec);
  }();
  return w;
}

inline LMParams random_lm(int vocab, int layers, std::uint64_t seed, int d_model = 16, int heads = 2,
                          int context = 16) {
  LMConfig c;
  c.vocab_size = vocab;
  c.d_model = d_model;
  c.n_layers = layers;
  c.n_heads = heads;
  c.context = context;
  auto lm = LMParams::init(c, seed);
  // Larger weights than the init so attention and MLPs are far from linear.
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& [name, v] : lm.named_tensors()) {
    if (name.find("_g") != std::string::npos || name.find("_b") != std::string::npos) continue;
    for (Eigen::Index i = 0; i < v->value.size(); ++i) v->value.data()[i] += n(rng);
  }
  return lm;
}

// Collects warnings for the lifetime of the object.
struct WarningCapture {
  std::vector<std::string> messages;
  WarningCapture() {
    set_warning_sink([this](std::string_view m) { messages.emplace_back(m); });
  }
  ~WarningCapture() { set_warning_sink(nullptr); }
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;
};

// ||a - n|| / max(||a||, ||n||) between the analytic gradients of `loss`
// w.r.t. `params` and central differences with step `eps`. `value` must
// recompute the same scalar without recording a graph.
inline double gradient_rel_error(const std::function<ag::Var()>& loss, const std::function<double()>& value,
                                 const std::vector<ag::Var>& params, double eps) {
  for (auto& p : params) p->zero_grad();
  ag::backward(loss());
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (auto& p : params) {
    const Matrix analytic = p->has_grad() ? p->grad : Matrix::Zero(p->rows(), p->cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double keep = x;
      x = keep + eps;
      const double up = value();
      x = keep - eps;
      const double down = value();
      x = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.data()[i];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
    p->zero_grad();
  }
  const double scale = std::max(std::sqrt(std::max(na, nn)), 1e-12);
  return std::sqrt(diff) / scale;
}

inline Sequence seq_of(std::vector<TokenId> ids, std::size_t prompt_len) { return {std::move(ids), prompt_len}; }

}  // namespace nano::test
