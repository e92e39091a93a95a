#pragma once

// Minimal tape-free reverse-mode autodiff over dense row-major matrices.
//
// Every op returns a Var (shared node). When gradient recording is enabled and
// any input requires a gradient, the node keeps its parents and a backward
// closure; otherwise it is a plain value. backward() walks the graph in reverse
// topological order and accumulates into Node::grad.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace nano {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using TokenId = std::int32_t;

}  // namespace nano

namespace nano::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
  bool has_grad() const { return grad.size() != 0; }
  void zero_grad() { grad.resize(0, 0); }

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

bool grad_enabled();

// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var leaf(Matrix value, bool requires_grad = false);
Var constant(Matrix value);
Var detach(const Var& v);

// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
void backward(const Var& root);

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_bt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
// Adds a 1xC row to every row of a.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var gelu(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var slice_cols(const Var& x, Eigen::Index col, Eigen::Index count);
Var slice_rows(const Var& x, Eigen::Index row, Eigen::Index count);
Var concat_rows(const Var& top, const Var& bottom);
Var stack_rows(std::span<const Var> parts);
Var gather_rows(const Var& table, std::span<const TokenId> ids);
Var softmax_rows(const Var& x);
Var mean_rows(const Var& x);
Var sum_all(std::span<const Var> terms);

// Multi-head scaled dot-product attention. Query row t sits at absolute
// position offset + t and may attend to key rows 0..offset + t.
Var causal_attention(const Var& q, const Var& k, const Var& v, int heads, Eigen::Index offset);

// sum_t w_t * sum_v -targets(t, v) * log_softmax(logits)(t, v). Targets are
// constants; rows with zero weight contribute nothing.
Var soft_cross_entropy(const Var& logits, const Matrix& targets, std::span<const double> row_weights);

// sum_j -pos_w_j log s_j - neg_w_j log(1 - s_j) with s = sigmoid(logits),
// clamped to [lo, hi]. Outside the clamp range the term is constant in the
// logit and passes no gradient.
Var weighted_bce(const Var& logits, std::span<const double> pos_w, std::span<const double> neg_w,
                 double lo = 0.0, double hi = 1.0);

}  // namespace nano::ag
