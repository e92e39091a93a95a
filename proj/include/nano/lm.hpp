#pragma once

// Small decoder-only transformer (pre-LN, GELU MLP, learned positions, output
// projection tied to the token embedding table) with an explicit, differentiable
// key/value cache.

#include "nano/autograd.hpp"
#include "nano/vocab.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nano {

class ContextLengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct LMConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int context = 64;

  int d_ff() const { return 4 * d_model; }
  void validate() const;
  bool operator==(const LMConfig&) const = default;
};

struct LayerParams {
  ag::Var ln1_g, ln1_b;
  ag::Var w_qkv, b_qkv;
  ag::Var w_o, b_o;
  ag::Var ln2_g, ln2_b;
  ag::Var w_fc, b_fc;
  ag::Var w_proj, b_proj;
};

struct LMParams {
  LMConfig config;
  ag::Var tok_emb;  // vocab x d_model, also the output projection
  ag::Var pos_emb;  // context x d_model
  std::vector<LayerParams> layers;
  ag::Var lnf_g, lnf_b;

  static LMParams init(const LMConfig& config, std::uint64_t seed);

  bool embedding_frozen() const { return tok_emb && !tok_emb->requires_grad; }
  void freeze_embedding() { tok_emb->requires_grad = false; }

  // Everything except a frozen embedding table.
  std::vector<ag::Var> trainable() const;
  // Stable (name, tensor) listing of every tensor, embedding first.
  std::vector<std::pair<std::string, ag::Var>> named_tensors() const;

  // Deep copy. A frozen embedding table is shared by reference, not copied.
  LMParams clone() const;
  // Deep copy in which no tensor records gradients (a frozen embedding table
  // is still shared). Used for inference that differentiates w.r.t. inputs.
  LMParams frozen_copy() const;
};

// Per-layer cached keys and values covering positions [0, length()).
struct LayerKV {
  ag::Var k;
  ag::Var v;
};

struct KVState {
  std::vector<LayerKV> layers;

  Eigen::Index length() const { return layers.empty() ? 0 : layers.front().k->rows(); }
  bool empty() const { return length() == 0; }

  // Fresh leaves holding copies of the values.
  KVState detached(bool requires_grad = false) const;

  // Gradients laid out as [k0, v0, k1, v1, ...]; zeros where nothing flowed.
  std::vector<Matrix> gradients() const;
  // In place: value -= step * delta, same layout as gradients().
  void apply_delta(std::span<const Matrix> delta, double step);
};

struct BackboneOutput {
  ag::Var hidden;  // final-layer-normed hidden states, one row per input position
  KVState state;
};

struct LogitsOutput {
  ag::Var logits;  // rows x vocab
  KVState state;
};

ag::Var embed_tokens(const LMParams& lm, std::span<const TokenId> ids);

// Runs the transformer on input embeddings placed after `past`.
BackboneOutput run_backbone(const LMParams& lm, const ag::Var& input_embeddings, const KVState* past);

LogitsOutput forward_logits(const LMParams& lm, std::span<const TokenId> ids, const KVState* past);

struct ForwardResult {
  Matrix probs;  // next-token distribution for each fed position
  KVState state;
};

// Inference forward; no graph is recorded.
ForwardResult forward(const LMParams& lm, std::span<const TokenId> ids, const KVState* past = nullptr);

Matrix softmax(const Matrix& logits);

}  // namespace nano
