#include "support.hpp"

#include <gtest/gtest.h>

using namespace nano;
using nano::test::gradient_rel_error;

namespace {

Matrix randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Scalarizes a matrix-valued op with fixed random weights.
ag::Var weighted_sum(const ag::Var& x, std::uint64_t seed) {
  auto w = ag::constant(randn(x->cols(), 1, seed));
  auto col = ag::matmul(x, w);
  auto ones = ag::constant(Matrix::Ones(1, x->rows()));
  return ag::matmul(ones, col);
}

void expect_gradients(const std::function<ag::Var(const std::vector<ag::Var>&)>& f, std::vector<ag::Var> params,
                      double tol = 1e-6) {
  auto loss = [&] { return f(params); };
  auto value = [&] {
    ag::NoGradGuard g;
    return f(params)->value(0, 0);
  };
  EXPECT_LT(gradient_rel_error(loss, value, params, 1e-5), tol);
}

}  // namespace

TEST(Autograd, MatmulAndBroadcastGradients) {
  auto a = ag::leaf(randn(3, 4, 1), true);
  auto b = ag::leaf(randn(4, 5, 2), true);
  auto r = ag::leaf(randn(1, 5, 3), true);
  expect_gradients([](const auto& p) { return weighted_sum(ag::add_row(ag::matmul(p[0], p[1]), p[2]), 9); }, {a, b, r});
  expect_gradients([](const auto& p) { return weighted_sum(ag::matmul_bt(p[0], p[1]), 10); },
                   {ag::leaf(randn(3, 4, 4), true), ag::leaf(randn(6, 4, 5), true)});
}

TEST(Autograd, ElementwiseAndNormGradients) {
  auto x = ag::leaf(randn(4, 6, 11), true);
  auto g = ag::leaf(randn(1, 6, 12), true);
  auto b = ag::leaf(randn(1, 6, 13), true);
  expect_gradients([](const auto& p) { return weighted_sum(ag::layer_norm(p[0], p[1], p[2]), 14); }, {x, g, b});
  expect_gradients([](const auto& p) { return weighted_sum(ag::gelu(ag::scale(p[0], 1.7)), 15); }, {x});
  expect_gradients([](const auto& p) { return weighted_sum(ag::softmax_rows(p[0]), 16); }, {x});
  expect_gradients([](const auto& p) { return weighted_sum(ag::mean_rows(p[0]), 17); }, {x});
}

TEST(Autograd, SlicingAndGatherGradients) {
  auto x = ag::leaf(randn(5, 6, 21), true);
  auto y = ag::leaf(randn(2, 6, 22), true);
  expect_gradients(
      [](const auto& p) {
        auto top = ag::slice_rows(p[0], 1, 3);
        auto joined = ag::concat_rows(top, p[1]);
        return weighted_sum(ag::slice_cols(joined, 2, 3), 23);
      },
      {x, y});
  const TokenId ids[] = {4, 0, 4, 2};
  expect_gradients([&](const auto& p) { return weighted_sum(ag::gather_rows(p[0], ids), 24); }, {x});
  expect_gradients(
      [](const auto& p) {
        std::vector<ag::Var> rows{ag::slice_rows(p[0], 0, 1), p[1], ag::slice_rows(p[0], 4, 1)};
        return weighted_sum(ag::stack_rows(rows), 25);
      },
      {x, y});
  expect_gradients(
      [](const auto& p) {
        std::vector<ag::Var> terms{weighted_sum(p[0], 26), weighted_sum(p[1], 27)};
        return ag::sum_all(terms);
      },
      {x, y});
}

TEST(Autograd, AttentionGradientsWithOffset) {
  auto q = ag::leaf(randn(3, 8, 31), true);
  auto k = ag::leaf(randn(5, 8, 32), true);
  auto v = ag::leaf(randn(5, 8, 33), true);
  expect_gradients([](const auto& p) { return weighted_sum(ag::causal_attention(p[0], p[1], p[2], 2, 2), 34); },
                   {q, k, v});
}

TEST(Autograd, AttentionMasksFuturePositions) {
  auto q = ag::constant(randn(4, 4, 41));
  auto k = ag::constant(randn(4, 4, 42));
  Matrix vv = randn(4, 4, 43);
  auto first = ag::causal_attention(q, k, ag::constant(vv), 1, 0)->value;
  vv.row(3).setConstant(100.0);  // only row 3 may see key 3
  auto second = ag::causal_attention(q, k, ag::constant(vv), 1, 0)->value;
  EXPECT_TRUE(first.topRows(3).isApprox(second.topRows(3), 1e-12));
  EXPECT_FALSE(first.row(3).isApprox(second.row(3), 1e-6));
}

TEST(Autograd, LossGradients) {
  auto logits = ag::leaf(randn(3, 5, 51), true);
  Matrix targets = randn(3, 5, 52).cwiseAbs();
  for (Eigen::Index r = 0; r < 3; ++r) targets.row(r) /= targets.row(r).sum();
  const std::vector<double> w{0.5, 0.0, 2.0};
  expect_gradients([&](const auto& p) { return ag::soft_cross_entropy(p[0], targets, w); }, {logits});

  auto z = ag::leaf(randn(1, 4, 53), true);
  const std::vector<double> pos{1.0, 0.0, 0.5, 0.25}, neg{0.0, 1.0, 0.5, 0.0};
  expect_gradients([&](const auto& p) { return ag::weighted_bce(p[0], pos, neg); }, {z});
}

TEST(Autograd, ClampedBceIsFlatOutsideRange) {
  const double pos[] = {1.0}, neg[] = {0.0};
  auto z = ag::leaf(Matrix::Constant(1, 1, -30.0), true);
  auto l = ag::weighted_bce(z, pos, neg, 1e-6, 1.0 - 1e-6);
  EXPECT_NEAR(l->value(0, 0), -std::log(1e-6), 1e-9);
  ag::backward(l);
  EXPECT_EQ(z->grad(0, 0), 0.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  auto a = ag::leaf(randn(2, 2, 61), true);
  ag::Var out;
  {
    ag::NoGradGuard g;
    EXPECT_FALSE(ag::grad_enabled());
    out = ag::matmul(a, a);
  }
  EXPECT_TRUE(ag::grad_enabled());
  EXPECT_FALSE(out->requires_grad);
  EXPECT_TRUE(out->parents.empty());
}

TEST(Autograd, LeavesAccumulateAcrossBackwardCalls) {
  auto a = ag::leaf(Matrix::Constant(1, 1, 3.0), true);
  ag::backward(ag::scale(a, 2.0));
  ag::backward(ag::scale(a, 2.0));
  EXPECT_DOUBLE_EQ(a->grad(0, 0), 4.0);
}

TEST(Autograd, ShapeMismatchThrows) {
  auto a = ag::leaf(randn(2, 3, 71));
  auto b = ag::leaf(randn(2, 3, 72));
  EXPECT_THROW(ag::matmul(a, b), std::invalid_argument);
  EXPECT_THROW(ag::backward(a), std::invalid_argument);
}
