#include "nano/lm.hpp"

#include <cmath>

namespace nano {

void LMConfig::validate() const {
  if (vocab_size < 8) throw std::invalid_argument("LMConfig: vocab_size must be >= 8");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || context <= 1) {
    throw std::invalid_argument("LMConfig: sizes must be positive");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("LMConfig: d_model must be divisible by n_heads");
}

namespace {

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

ag::Var param(Matrix m) { return ag::leaf(std::move(m), true); }

ag::Var copy_param(const ag::Var& v) { return ag::leaf(v->value, v->requires_grad); }

}  // namespace

LMParams LMParams::init(const LMConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int d = config.d_model;
  const int ff = config.d_ff();
  const double std_w = 0.02;
  const double std_proj = 0.02 / std::sqrt(2.0 * config.n_layers);

  LMParams p;
  p.config = config;
  p.tok_emb = param(normal_matrix(config.vocab_size, d, 0.1, rng));
  p.pos_emb = param(normal_matrix(config.context, d, 0.02, rng));
  for (int l = 0; l < config.n_layers; ++l) {
    LayerParams lp;
    lp.ln1_g = param(Matrix::Ones(1, d));
    lp.ln1_b = param(Matrix::Zero(1, d));
    lp.w_qkv = param(normal_matrix(d, 3 * d, std_w, rng));
    lp.b_qkv = param(Matrix::Zero(1, 3 * d));
    lp.w_o = param(normal_matrix(d, d, std_proj, rng));
    lp.b_o = param(Matrix::Zero(1, d));
    lp.ln2_g = param(Matrix::Ones(1, d));
    lp.ln2_b = param(Matrix::Zero(1, d));
    lp.w_fc = param(normal_matrix(d, ff, std_w, rng));
    lp.b_fc = param(Matrix::Zero(1, ff));
    lp.w_proj = param(normal_matrix(ff, d, std_proj, rng));
    lp.b_proj = param(Matrix::Zero(1, d));
    p.layers.push_back(std::move(lp));
  }
  p.lnf_g = param(Matrix::Ones(1, d));
  p.lnf_b = param(Matrix::Zero(1, d));
  return p;
}

std::vector<std::pair<std::string, ag::Var>> LMParams::named_tensors() const {
  std::vector<std::pair<std::string, ag::Var>> out;
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lp = layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.emplace_back(pre + "ln1_g", lp.ln1_g);
    out.emplace_back(pre + "ln1_b", lp.ln1_b);
    out.emplace_back(pre + "w_qkv", lp.w_qkv);
    out.emplace_back(pre + "b_qkv", lp.b_qkv);
    out.emplace_back(pre + "w_o", lp.w_o);
    out.emplace_back(pre + "b_o", lp.b_o);
    out.emplace_back(pre + "ln2_g", lp.ln2_g);
    out.emplace_back(pre + "ln2_b", lp.ln2_b);
    out.emplace_back(pre + "w_fc", lp.w_fc);
    out.emplace_back(pre + "b_fc", lp.b_fc);
    out.emplace_back(pre + "w_proj", lp.w_proj);
    out.emplace_back(pre + "b_proj", lp.b_proj);
  }
  out.emplace_back("lnf_g", lnf_g);
  out.emplace_back("lnf_b", lnf_b);
  return out;
}

std::vector<ag::Var> LMParams::trainable() const {
  std::vector<ag::Var> out;
  for (auto& [name, v] : named_tensors()) {
    if (v->requires_grad) out.push_back(v);
  }
  return out;
}

LMParams LMParams::clone() const {
  LMParams p;
  p.config = config;
  p.tok_emb = embedding_frozen() ? tok_emb : copy_param(tok_emb);
  p.pos_emb = copy_param(pos_emb);
  for (const auto& lp : layers) {
    p.layers.push_back(LayerParams{copy_param(lp.ln1_g), copy_param(lp.ln1_b), copy_param(lp.w_qkv),
                                   copy_param(lp.b_qkv), copy_param(lp.w_o), copy_param(lp.b_o),
                                   copy_param(lp.ln2_g), copy_param(lp.ln2_b), copy_param(lp.w_fc),
                                   copy_param(lp.b_fc), copy_param(lp.w_proj), copy_param(lp.b_proj)});
  }
  p.lnf_g = copy_param(lnf_g);
  p.lnf_b = copy_param(lnf_b);
  return p;
}

LMParams LMParams::frozen_copy() const {
  LMParams p = clone();
  for (auto& [name, v] : p.named_tensors()) {
    if (v != tok_emb) v->requires_grad = false;
  }
  return p;
}

KVState KVState::detached(bool requires_grad) const {
  KVState out;
  out.layers.reserve(layers.size());
  for (const auto& l : layers) {
    out.layers.push_back({ag::leaf(l.k->value, requires_grad), ag::leaf(l.v->value, requires_grad)});
  }
  return out;
}

std::vector<Matrix> KVState::gradients() const {
  std::vector<Matrix> out;
  out.reserve(layers.size() * 2);
  for (const auto& l : layers) {
    for (const auto* t : {&l.k, &l.v}) {
      out.push_back((*t)->has_grad() ? (*t)->grad : Matrix::Zero((*t)->rows(), (*t)->cols()));
    }
  }
  return out;
}

void KVState::apply_delta(std::span<const Matrix> delta, double step) {
  if (delta.size() != layers.size() * 2) throw std::invalid_argument("KVState::apply_delta: layout mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].k->value -= step * delta[2 * l];
    layers[l].v->value -= step * delta[2 * l + 1];
  }
}

ag::Var embed_tokens(const LMParams& lm, std::span<const TokenId> ids) { return ag::gather_rows(lm.tok_emb, ids); }

BackboneOutput run_backbone(const LMParams& lm, const ag::Var& input_embeddings, const KVState* past) {
  const auto& cfg = lm.config;
  const Eigen::Index offset = past ? past->length() : 0;
  const Eigen::Index n = input_embeddings->rows();
  if (n == 0) throw std::invalid_argument("forward: empty input");
  if (offset + n > cfg.context) {
    throw ContextLengthError("forward: " + std::to_string(offset + n) + " positions exceed context " +
                             std::to_string(cfg.context));
  }
  if (past && !past->empty() && past->layers.size() != lm.layers.size()) {
    throw std::invalid_argument("forward: KV state layer count mismatch");
  }

  const int d = cfg.d_model;
  ag::Var x = ag::add(input_embeddings, ag::slice_rows(lm.pos_emb, offset, n));
  BackboneOutput out;
  out.state.layers.reserve(lm.layers.size());
  for (std::size_t l = 0; l < lm.layers.size(); ++l) {
    const auto& lp = lm.layers[l];
    ag::Var a = ag::layer_norm(x, lp.ln1_g, lp.ln1_b);
    ag::Var qkv = ag::add_row(ag::matmul(a, lp.w_qkv), lp.b_qkv);
    ag::Var q = ag::slice_cols(qkv, 0, d);
    ag::Var k = ag::slice_cols(qkv, d, d);
    ag::Var v = ag::slice_cols(qkv, 2 * d, d);
    if (past && !past->empty()) {
      k = ag::concat_rows(past->layers[l].k, k);
      v = ag::concat_rows(past->layers[l].v, v);
    }
    ag::Var att = ag::causal_attention(q, k, v, cfg.n_heads, offset);
    x = ag::add(x, ag::add_row(ag::matmul(att, lp.w_o), lp.b_o));
    ag::Var m = ag::layer_norm(x, lp.ln2_g, lp.ln2_b);
    m = ag::gelu(ag::add_row(ag::matmul(m, lp.w_fc), lp.b_fc));
    x = ag::add(x, ag::add_row(ag::matmul(m, lp.w_proj), lp.b_proj));
    out.state.layers.push_back({std::move(k), std::move(v)});
  }
  out.hidden = ag::layer_norm(x, lm.lnf_g, lm.lnf_b);
  return out;
}

LogitsOutput forward_logits(const LMParams& lm, std::span<const TokenId> ids, const KVState* past) {
  for (TokenId t : ids) {
    if (t < 0 || t >= lm.config.vocab_size) throw std::out_of_range("forward: token id out of range");
  }
  auto bb = run_backbone(lm, embed_tokens(lm, ids), past);
  return {ag::matmul_bt(bb.hidden, lm.tok_emb), std::move(bb.state)};
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

ForwardResult forward(const LMParams& lm, std::span<const TokenId> ids, const KVState* past) {
  ag::NoGradGuard no_grad;
  auto out = forward_logits(lm, ids, past);
  return {softmax(out.logits->value), std::move(out.state)};
}

}  // namespace nano
