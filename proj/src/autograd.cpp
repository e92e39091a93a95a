#include "nano/autograd.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace nano::ag {

namespace {

thread_local bool g_grad_enabled = true;

bool any_requires(std::initializer_list<const Var*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Var* v : inputs) {
    if ((*v)->requires_grad) return true;
  }
  return false;
}

Var make(Matrix value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward_fn = std::move(fn);
  return n;
}

Var make_const(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

void require_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + what);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var leaf(Matrix value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Matrix value) { return make_const(std::move(value)); }

Var detach(const Var& v) { return make_const(v->value); }

void backward(const Var& root) {
  if (root->value.size() != 1) throw std::invalid_argument("backward() needs a scalar root");
  if (!root->requires_grad) return;

  // Iterative post-order DFS; graphs from token-by-token unrolls get deep.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !p->parents.empty() && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->has_grad() && n->backward_fn) n->backward_fn(*n);
    // Interior grads are not needed once propagated.
    if (n != root.get()) n->zero_grad();
  }
}

Var matmul(const Var& a, const Var& b) {
  require_shape(a->cols() == b->rows(), "matmul");
  Matrix out = a->value * b->value;
  if (!any_requires({&a, &b})) return make_const(std::move(out));
  return make(std::move(out), {a, b}, [](Node& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) a.accumulate(self.grad * b.value.transpose());
    if (b.requires_grad) b.accumulate(a.value.transpose() * self.grad);
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  require_shape(a->cols() == b->cols(), "matmul_bt");
  Matrix out = a->value * b->value.transpose();
  if (!any_requires({&a, &b})) return make_const(std::move(out));
  return make(std::move(out), {a, b}, [](Node& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) a.accumulate(self.grad * b.value);
    if (b.requires_grad) b.accumulate(self.grad.transpose() * a.value);
  });
}

Var add(const Var& a, const Var& b) {
  require_shape(a->rows() == b->rows() && a->cols() == b->cols(), "add");
  Matrix out = a->value + b->value;
  if (!any_requires({&a, &b})) return make_const(std::move(out));
  return make(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  require_shape(row->rows() == 1 && row->cols() == a->cols(), "add_row");
  Matrix out = a->value.rowwise() + row->value.row(0);
  if (!any_requires({&a, &row})) return make_const(std::move(out));
  return make(std::move(out), {a, row}, [](Node& self) {
    auto& a = *self.parents[0];
    auto& row = *self.parents[1];
    if (a.requires_grad) a.accumulate(self.grad);
    if (row.requires_grad) row.accumulate(self.grad.colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  Matrix out = a->value * s;
  if (!any_requires({&a})) return make_const(std::move(out));
  return make(std::move(out), {a}, [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

Var gelu(const Var& a) {
  constexpr double c = kGeluC;
  const Matrix& x = a->value;
  Matrix t = (c * (x.array() + 0.044715 * x.array().cube())).tanh().matrix();
  Matrix out = (0.5 * x.array() * (1.0 + t.array())).matrix();
  if (!any_requires({&a})) return make_const(std::move(out));
  return make(std::move(out), {a}, [t = std::move(t)](Node& self) {
    const auto x = self.parents[0]->value.array();
    const auto th = t.array();
    auto d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th.square()) * kGeluC * (1.0 + 3 * 0.044715 * x.square());
    self.parents[0]->accumulate((self.grad.array() * d).matrix());
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Eigen::Index n = x->cols();
  require_shape(gain->cols() == n && bias->cols() == n, "layer_norm");
  Matrix xhat(x->rows(), n);
  Eigen::VectorXd inv_std(x->rows());
  for (Eigen::Index r = 0; r < x->rows(); ++r) {
    const double mean = x->value.row(r).mean();
    auto centered = x->value.row(r).array() - mean;
    const double var = centered.square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (centered * inv_std(r)).matrix();
  }
  Matrix out = (xhat.array().rowwise() * gain->value.row(0).array()).matrix();
  out.rowwise() += bias->value.row(0);
  if (!any_requires({&x, &gain, &bias})) return make_const(std::move(out));
  return make(std::move(out), {x, gain, bias},
              [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                auto& x = *self.parents[0];
                auto& g = *self.parents[1];
                auto& b = *self.parents[2];
                if (g.requires_grad) g.accumulate((self.grad.array() * xhat.array()).colwise().sum().matrix());
                if (b.requires_grad) b.accumulate(self.grad.colwise().sum());
                if (x.requires_grad) {
                  Matrix dxhat = (self.grad.array().rowwise() * g.value.row(0).array()).matrix();
                  Matrix dx(dxhat.rows(), dxhat.cols());
                  for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                    const double m1 = dxhat.row(r).mean();
                    const double m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                    dx.row(r) = (inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2)).matrix();
                  }
                  x.accumulate(dx);
                }
              });
}

Var slice_cols(const Var& x, Eigen::Index col, Eigen::Index count) {
  require_shape(col >= 0 && col + count <= x->cols(), "slice_cols");
  Matrix out = x->value.middleCols(col, count);
  if (!any_requires({&x})) return make_const(std::move(out));
  return make(std::move(out), {x}, [col, count](Node& self) {
    auto& x = *self.parents[0];
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleCols(col, count) = self.grad;
    x.accumulate(g);
  });
}

Var slice_rows(const Var& x, Eigen::Index row, Eigen::Index count) {
  require_shape(row >= 0 && row + count <= x->rows(), "slice_rows");
  Matrix out = x->value.middleRows(row, count);
  if (!any_requires({&x})) return make_const(std::move(out));
  return make(std::move(out), {x}, [row, count](Node& self) {
    auto& x = *self.parents[0];
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleRows(row, count) = self.grad;
    x.accumulate(g);
  });
}

Var concat_rows(const Var& top, const Var& bottom) {
  require_shape(top->cols() == bottom->cols(), "concat_rows");
  Matrix out(top->rows() + bottom->rows(), top->cols());
  out.topRows(top->rows()) = top->value;
  out.bottomRows(bottom->rows()) = bottom->value;
  if (!any_requires({&top, &bottom})) return make_const(std::move(out));
  return make(std::move(out), {top, bottom}, [](Node& self) {
    auto& t = *self.parents[0];
    auto& b = *self.parents[1];
    if (t.requires_grad) t.accumulate(self.grad.topRows(t.rows()));
    if (b.requires_grad) b.accumulate(self.grad.bottomRows(b.rows()));
  });
}

Var stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("stack_rows: nothing to stack");
  Eigen::Index rows = 0;
  bool needs = false;
  for (const auto& p : parts) {
    require_shape(p->cols() == parts.front()->cols(), "stack_rows");
    rows += p->rows();
    needs = needs || (g_grad_enabled && p->requires_grad);
  }
  Matrix out(rows, parts.front()->cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p->rows()) = p->value;
    at += p->rows();
  }
  if (!needs) return make_const(std::move(out));
  return make(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
    Eigen::Index at = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad.middleRows(at, p->rows()));
      at += p->rows();
    }
  });
}

Var gather_rows(const Var& table, std::span<const TokenId> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table->cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->rows()) throw std::out_of_range("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  if (!any_requires({&table})) return make_const(std::move(out));
  std::vector<TokenId> idx(ids.begin(), ids.end());
  return make(std::move(out), {table}, [idx = std::move(idx)](Node& self) {
    auto& t = *self.parents[0];
    Matrix g = Matrix::Zero(t.rows(), t.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    t.accumulate(g);
  });
}

Var softmax_rows(const Var& x) {
  Matrix out(x->rows(), x->cols());
  for (Eigen::Index r = 0; r < x->rows(); ++r) {
    const double m = x->value.row(r).maxCoeff();
    out.row(r) = (x->value.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  if (!any_requires({&x})) return make_const(std::move(out));
  return make(std::move(out), {x}, [](Node& self) {
    const Matrix& y = self.value;
    Matrix dx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = self.grad.row(r).dot(y.row(r));
      dx.row(r) = (y.row(r).array() * (self.grad.row(r).array() - dot)).matrix();
    }
    self.parents[0]->accumulate(dx);
  });
}

Var mean_rows(const Var& x) {
  if (x->rows() == 0) throw std::invalid_argument("mean_rows of empty matrix");
  Matrix out = x->value.colwise().mean();
  if (!any_requires({&x})) return make_const(std::move(out));
  return make(std::move(out), {x}, [](Node& self) {
    auto& x = *self.parents[0];
    Matrix g = self.grad.replicate(x.rows(), 1) / static_cast<double>(x.rows());
    x.accumulate(g);
  });
}

Var sum_all(std::span<const Var> terms) {
  if (terms.empty()) return make_const(Matrix::Zero(1, 1));
  Matrix out = Matrix::Zero(terms.front()->rows(), terms.front()->cols());
  bool needs = false;
  for (const auto& t : terms) {
    require_shape(t->rows() == out.rows() && t->cols() == out.cols(), "sum_all");
    out += t->value;
    needs = needs || (g_grad_enabled && t->requires_grad);
  }
  if (!needs) return make_const(std::move(out));
  return make(std::move(out), std::vector<Var>(terms.begin(), terms.end()), [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Var causal_attention(const Var& q, const Var& k, const Var& v, int heads, Eigen::Index offset) {
  const Eigen::Index t_len = q->rows();
  const Eigen::Index s_len = k->rows();
  const Eigen::Index d = q->cols();
  require_shape(k->cols() == d && v->cols() == d && v->rows() == s_len && d % heads == 0, "causal_attention");
  require_shape(offset + t_len <= s_len, "causal_attention (offset)");
  const Eigen::Index dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(t_len, d);
  for (int h = 0; h < heads; ++h) {
    Matrix scores = (q->value.middleCols(h * dh, dh) * k->value.middleCols(h * dh, dh).transpose()) * inv_sqrt;
    for (Eigen::Index t = 0; t < t_len; ++t) {
      const Eigen::Index visible = offset + t + 1;
      auto row = scores.row(t);
      const double m = row.head(visible).maxCoeff();
      row.head(visible) = (row.head(visible).array() - m).exp().matrix();
      row.head(visible) /= row.head(visible).sum();
      if (visible < s_len) row.tail(s_len - visible).setZero();
    }
    out.middleCols(h * dh, dh) = scores * v->value.middleCols(h * dh, dh);
    probs[static_cast<std::size_t>(h)] = std::move(scores);
  }
  if (!any_requires({&q, &k, &v})) return make_const(std::move(out));
  return make(std::move(out), {q, k, v}, [probs = std::move(probs), heads, dh, inv_sqrt](Node& self) {
    auto& q = *self.parents[0];
    auto& k = *self.parents[1];
    auto& v = *self.parents[2];
    Matrix dq = Matrix::Zero(q.rows(), q.cols());
    Matrix dk = Matrix::Zero(k.rows(), k.cols());
    Matrix dv = Matrix::Zero(v.rows(), v.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& a = probs[static_cast<std::size_t>(h)];
      const auto dout = self.grad.middleCols(h * dh, dh);
      Matrix da = dout * v.value.middleCols(h * dh, dh).transpose();
      if (v.requires_grad) dv.middleCols(h * dh, dh) = a.transpose() * dout;
      Eigen::VectorXd dots = (da.array() * a.array()).rowwise().sum();
      Matrix ds = (a.array() * (da.array().colwise() - dots.array())).matrix() * inv_sqrt;
      if (q.requires_grad) dq.middleCols(h * dh, dh) = ds * k.value.middleCols(h * dh, dh);
      if (k.requires_grad) dk.middleCols(h * dh, dh) = ds.transpose() * q.value.middleCols(h * dh, dh);
    }
    if (q.requires_grad) q.accumulate(dq);
    if (k.requires_grad) k.accumulate(dk);
    if (v.requires_grad) v.accumulate(dv);
  });
}

Var soft_cross_entropy(const Var& logits, const Matrix& targets, std::span<const double> row_weights) {
  require_shape(targets.rows() == logits->rows() && targets.cols() == logits->cols() &&
                    static_cast<Eigen::Index>(row_weights.size()) == logits->rows(),
                "soft_cross_entropy");
  Matrix log_probs(logits->rows(), logits->cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < logits->rows(); ++r) {
    const double m = logits->value.row(r).maxCoeff();
    const double lse = m + std::log((logits->value.row(r).array() - m).exp().sum());
    log_probs.row(r) = (logits->value.row(r).array() - lse).matrix();
    const double w = row_weights[static_cast<std::size_t>(r)];
    if (w != 0.0) loss -= w * targets.row(r).dot(log_probs.row(r));
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  if (!any_requires({&logits})) return make_const(std::move(out));
  std::vector<double> w(row_weights.begin(), row_weights.end());
  return make(std::move(out), {logits},
              [targets, w = std::move(w), log_probs = std::move(log_probs)](Node& self) {
                const double g = self.grad(0, 0);
                Matrix d(targets.rows(), targets.cols());
                for (Eigen::Index r = 0; r < d.rows(); ++r) {
                  const double wr = w[static_cast<std::size_t>(r)];
                  if (wr == 0.0) {
                    d.row(r).setZero();
                    continue;
                  }
                  const double mass = targets.row(r).sum();
                  d.row(r) = (g * wr) * (log_probs.row(r).array().exp() * mass - targets.row(r).array()).matrix();
                }
                self.parents[0]->accumulate(d);
              });
}

Var weighted_bce(const Var& logits, std::span<const double> pos_w, std::span<const double> neg_w, double lo,
                 double hi) {
  const auto n = static_cast<std::size_t>(logits->value.size());
  require_shape(logits->rows() == 1 && pos_w.size() == n && neg_w.size() == n, "weighted_bce");
  const bool clamped = lo > 0.0 || hi < 1.0;
  double loss = 0.0;
  std::vector<double> dz(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double z = logits->value(0, static_cast<Eigen::Index>(j));
    const double s = sigmoid(z);
    if (clamped && (s < lo || s > hi)) {
      const double sc = s < lo ? lo : hi;
      loss += -pos_w[j] * std::log(sc) - neg_w[j] * std::log1p(-sc);
      continue;
    }
    // log s = -softplus(-z), log(1-s) = -softplus(z)
    loss += pos_w[j] * softplus(-z) + neg_w[j] * softplus(z);
    dz[j] = -pos_w[j] * (1.0 - s) + neg_w[j] * s;
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  if (!any_requires({&logits})) return make_const(std::move(out));
  return make(std::move(out), {logits}, [dz = std::move(dz)](Node& self) {
    Matrix d(1, static_cast<Eigen::Index>(dz.size()));
    for (std::size_t j = 0; j < dz.size(); ++j) d(0, static_cast<Eigen::Index>(j)) = dz[j] * self.grad(0, 0);
    self.parents[0]->accumulate(d);
  });
}

}  // namespace nano::ag
