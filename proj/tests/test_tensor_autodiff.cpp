#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "avsd/grad_check.hpp"
#include "avsd/ops.hpp"

using namespace avsd;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Tensor, ShapeAndValueCountMustAgree) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ContractError);
  EXPECT_THROW(Tensor<double>(Shape{0}), ContractError);
  Tensor<double> t({2, 3});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.reshaped({6}).rank(), 1u);
}

TEST(Softmax, HandValues) {
  Graph<double> g;
  auto p = ops::softmax(g.constant(Tensor<double>::vector({0.0, 0.0})));
  EXPECT_DOUBLE_EQ(p.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(p.value()[1], 0.5);
  auto q = ops::softmax(g.constant(Tensor<double>::vector({0.0, std::log(3.0)})));
  EXPECT_NEAR(q.value()[0], 0.25, 1e-15);
  EXPECT_NEAR(q.value()[1], 0.75, 1e-15);
}

TEST(Softmax, EmptyAndFullyMaskedInputsAreRejected) {
  Graph<double> g;
  auto v = g.constant(Tensor<double>::vector({1.0, 2.0}));
  Mask none{0, 0};
  EXPECT_THROW(ops::softmax(v, none), ContractError);
  Mask wrong_size{1};
  EXPECT_THROW(ops::softmax(v, wrong_size), ContractError);
}

TEST(Softmax, PropertySumsToOneAndIsShiftInvariant) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> big(-50.0, 50.0);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 500; ++trial) {
    Graph<double> g;
    auto x = random_tensor({std::size_t(len(rng))}, rng, -30.0, 30.0);
    const double c = big(rng);
    auto shifted = x;
    for (auto& v : shifted.values()) v += c;
    auto p = ops::softmax(g.constant(x)).value();
    auto q = ops::softmax(g.constant(shifted)).value();
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GE(p[i], 0.0);
      EXPECT_NEAR(p[i], q[i], 1e-9);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(L2Normalize, HandValues) {
  Graph<double> g;
  auto a = ops::l2_normalize(g.constant(Tensor<double>::vector({3.0, 4.0}))).value();
  EXPECT_NEAR(a[0], 0.6, 1e-15);
  EXPECT_NEAR(a[1], 0.8, 1e-15);
  auto u = ops::l2_normalize(g.constant(Tensor<double>::vector({0.0, 1.0, 0.0}))).value();
  EXPECT_EQ(u, Tensor<double>::vector({0.0, 1.0, 0.0}));
  auto z = ops::l2_normalize(g.constant(Tensor<double>::vector({0.0, 0.0}))).value();
  EXPECT_EQ(z, Tensor<double>::vector({0.0, 0.0}));
}

TEST(L2Normalize, PropertyNormIsZeroOrOne) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    Graph<double> g;
    auto m = random_tensor({5, 7}, rng, -10, 10);
    if (trial % 5 == 0)
      for (std::size_t i = 0; i < 7; ++i) m.at(2, i) = 0.0;
    auto y = ops::l2_normalize(g.constant(m)).value();
    for (std::size_t r = 0; r < 5; ++r) {
      double sq = 0.0;
      for (auto v : y.row(r)) sq += v * v;
      const double norm = std::sqrt(sq);
      EXPECT_TRUE(norm == 0.0 || std::abs(norm - 1.0) < 1e-9) << norm;
    }
  }
}

TEST(LstmCell, ZeroParametersGiveAnalyticGates) {
  ParameterSet<double> params;
  auto wx = params.add("wx", {4, 1}, ParamKind::kWeight);
  auto wh = params.add("wh", {4, 1}, ParamKind::kWeight);
  auto b = params.add("b", {4}, ParamKind::kBias);
  Graph<double> g(&params);
  LstmCellParams<double> p{g.param(wx), g.param(wh), g.param(b)};
  LstmState<double> s{g.constant(Tensor<double>::vector({0.0})),
                      g.constant(Tensor<double>::vector({1.0}))};
  auto next = ops::lstm_cell(g.constant(Tensor<double>::vector({0.3})), s, p);
  EXPECT_DOUBLE_EQ(next.c.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(next.h.value()[0], 0.5 * std::tanh(0.5));

  LstmState<double> zero{g.constant(Tensor<double>::vector({0.0})),
                         g.constant(Tensor<double>::vector({0.0}))};
  auto fixed = ops::lstm_cell(g.constant(Tensor<double>::vector({0.0})), zero, p);
  EXPECT_EQ(fixed.h.value()[0], 0.0);
  EXPECT_EQ(fixed.c.value()[0], 0.0);
}

TEST(LstmCell, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(3);
  const std::size_t in = 5, hid = 4;
  auto Wx = random_tensor({4 * hid, in}, rng);
  auto Wh = random_tensor({4 * hid, hid}, rng);
  auto B = random_tensor({4 * hid}, rng);
  auto X = random_tensor({in}, rng);
  auto H = random_tensor({hid}, rng);
  auto C = random_tensor({hid}, rng);

  Graph<double> g;
  LstmCellParams<double> p{g.constant(Wx), g.constant(Wh), g.constant(B)};
  auto out = ops::lstm_cell(g.constant(X), {g.constant(H), g.constant(C)}, p);

  for (std::size_t j = 0; j < hid; ++j) {
    double z[4];
    for (int gate = 0; gate < 4; ++gate) {
      const std::size_t r = gate * hid + j;
      double acc = B[r];
      for (std::size_t k = 0; k < in; ++k) acc += Wx.at(r, k) * X[k];
      for (std::size_t k = 0; k < hid; ++k) acc += Wh.at(r, k) * H[k];
      z[gate] = acc;
    }
    const double c_new = sigmoid(z[1]) * C[j] + sigmoid(z[0]) * std::tanh(z[2]);
    const double h_new = sigmoid(z[3]) * std::tanh(c_new);
    EXPECT_NEAR(out.c.value()[j], c_new, 1e-12);
    EXPECT_NEAR(out.h.value()[j], h_new, 1e-12);
  }
}

TEST(LstmCell, DimensionMismatchIsRejected) {
  Graph<double> g;
  LstmCellParams<double> p{g.constant(Tensor<double>({8, 3})), g.constant(Tensor<double>({8, 2})),
                           g.constant(Tensor<double>({8}))};
  LstmState<double> s{g.constant(Tensor<double>({2})), g.constant(Tensor<double>({2}))};
  EXPECT_THROW(ops::lstm_cell(g.constant(Tensor<double>({4})), s, p), ContractError);
}

TEST(Backward, SquaredNormGradientIsTwoX) {
  ParameterSet<double> params;
  auto x = params.add("x", {4}, ParamKind::kWeight);
  params[x].value = Tensor<double>::vector({1.0, -2.0, 0.5, 3.0});
  Graph<double> g(&params);
  auto xv = g.param(x);
  auto loss = ops::sum(ops::mul(xv, xv));
  Gradients<double> grads(params);
  g.backward(loss, grads);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(grads[x][i], 2.0 * params[x].value[i]);
}

TEST(Backward, SoftmaxCrossEntropyGradientIsPMinusT) {
  ParameterSet<double> params;
  auto z = params.add("z", {5}, ParamKind::kWeight);
  params[z].value = Tensor<double>::vector({0.1, -1.0, 2.0, 0.3, 0.0});
  Graph<double> g(&params);
  auto loss = ops::cross_entropy(g.param(z), 2);
  Gradients<double> grads(params);
  g.backward(loss, grads);
  Graph<double> h;
  auto p = ops::softmax(h.constant(params[z].value)).value();
  for (std::size_t i = 0; i < 5; ++i)
    EXPECT_NEAR(grads[z][i], p[i] - (i == 2 ? 1.0 : 0.0), 1e-14);
}

TEST(Backward, NonScalarLossIsRejectedAndUnreachedParametersGetZero) {
  ParameterSet<double> params;
  auto a = params.add("a", {3}, ParamKind::kWeight);
  auto unused = params.add("unused", {2}, ParamKind::kWeight);
  params[a].value = Tensor<double>::vector({1, 2, 3});
  params[unused].value = Tensor<double>::vector({4, 5});
  Graph<double> g(&params);
  auto v = ops::tanh(g.param(a));
  Gradients<double> grads(params);
  EXPECT_THROW(g.backward(v, grads), ContractError);
  g.backward(ops::sum(v), grads);
  EXPECT_EQ(grads[unused], Tensor<double>({2}));
}

TEST(Backward, RepeatedBackwardIsDeterministic) {
  ParameterSet<double> params;
  std::mt19937_64 rng(5);
  auto w = params.add("w", {3, 4}, ParamKind::kWeight);
  params[w].value = random_tensor({3, 4}, rng);
  Graph<double> g(&params);
  auto x = g.constant(random_tensor({6, 4}, rng));
  auto loss = ops::sum(ops::l2_normalize(ops::tanh(ops::linear(x, g.param(w)))));
  Gradients<double> first(params), second(params);
  g.backward(loss, first);
  g.backward(loss, second);
  EXPECT_EQ(first[w], second[w]);
}

TEST(GradCheck, LinearMapIsExact) {
  ParameterSet<double> params;
  std::mt19937_64 rng(1);
  auto w = params.add("w", {6}, ParamKind::kWeight);
  params[w].value = random_tensor({6}, rng);
  const auto x = random_tensor({6}, rng);
  auto result = grad_check(
      [&](Graph<double>& g) { return ops::sum(ops::mul(g.param(w), g.constant(x))); },
      params);
  EXPECT_LT(result.max_relative_error, 1e-10);
}

TEST(GradCheck, SingleLstmCell) {
  ParameterSet<double> params;
  std::mt19937_64 rng(2);
  const std::size_t in = 3, hid = 4;
  auto wx = params.add("wx", {4 * hid, in}, ParamKind::kWeight);
  auto wh = params.add("wh", {4 * hid, hid}, ParamKind::kWeight);
  auto b = params.add("b", {4 * hid}, ParamKind::kBias);
  auto x = params.add("x", {in}, ParamKind::kWeight);
  auto h = params.add("h", {hid}, ParamKind::kWeight);
  auto c = params.add("c", {hid}, ParamKind::kWeight);
  for (auto& p : params) p.value = random_tensor(p.value.shape(), rng);
  const auto proj = random_tensor({2 * hid}, rng);
  auto result = grad_check(
      [&](Graph<double>& g) {
        LstmCellParams<double> p{g.param(wx), g.param(wh), g.param(b)};
        auto s = ops::lstm_cell(g.param(x), {g.param(h), g.param(c)}, p);
        std::vector<Var<double>> parts{s.h, s.c};
        return ops::sum(ops::mul(ops::concat<double>(parts), g.constant(proj)));
      },
      params);
  EXPECT_LT(result.max_relative_error, 1e-6) << result.worst_parameter;
}

// Random composites of every primitive, checked against central differences.
TEST(GradCheck, PropertyRandomCompositesAgreeWithFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 25; ++trial) {
    ParameterSet<double> params;
    auto a = params.add("a", {4, 3}, ParamKind::kWeight);
    auto w = params.add("w", {5, 3}, ParamKind::kWeight);
    auto b = params.add("b", {5}, ParamKind::kBias);
    auto v = params.add("v", {5}, ParamKind::kWeight);
    auto s = params.add("s", {1}, ParamKind::kScalar);
    auto e = params.add("e", {6, 3}, ParamKind::kEmbedding);
    for (auto& p : params) p.value = random_tensor(p.value.shape(), rng);
    Mask mask{1, 0, 1, 1};
    const int op_mix = trial % 3;
    auto build = [&](Graph<double>& g) {
      auto x = g.param(a);
      auto bias = g.param(b);
      auto hidden = ops::linear(x, g.param(w), &bias);
      hidden = op_mix == 0 ? ops::relu(hidden) : op_mix == 1 ? ops::tanh(hidden)
                                                             : ops::sigmoid(hidden);
      auto scores = ops::mul(ops::matmul(hidden, g.param(v)), g.param(s));
      auto p = ops::softmax(scores, mask);
      auto attended = ops::matmul(x, p, true);
      const int ids[] = {1, 4, 4};
      auto emb = ops::lookup(g.param(e), std::span<const int>(ids));
      auto normed = ops::l2_normalize(ops::add(emb, attended));
      auto pooled = ops::mean_rows(normed, Mask{1, 1, 0});
      std::vector<Var<double>> parts{pooled, ops::row(x, 1), ops::slice(scores, 1, 2)};
      auto cat = ops::concat<double>(parts);
      std::vector<Var<double>> stacked{cat, ops::scale(cat, 0.5)};
      auto m = ops::stack_rows<double>(stacked);
      auto logits = ops::matmul(m, ops::slice(cat, 0, 8), false, false);
      return ops::add(ops::cross_entropy(logits, 1), ops::element(cat, 2));
    };
    auto result = grad_check(build, params);
    EXPECT_LT(result.max_relative_error, 1e-4)
        << "trial " << trial << " worst " << result.worst_parameter << "[" << result.worst_index
        << "] analytic " << result.worst_analytic << " numeric " << result.worst_numeric;
  }
}
