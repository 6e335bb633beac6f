#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "gradcheck.hpp"
#include "store/nn.hpp"
#include "store/tensor.hpp"

namespace store {
namespace {

using testing::max_rel_error;
using testing::weighted_sum;

constexpr double kElementaryTol = 1e-4;

Tensor param(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return randn(std::move(shape), rng, stddev, true);
}

TEST(TensorBasics, ShapeAndCount) {
  const Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.values().size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor::from_values({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST(TensorBasics, SquareGradientAtThree) {
  const Tensor x = Tensor::from_values({1}, {3.0}, true);
  const auto g = grad(sum(mul(x, x)), {x});
  EXPECT_DOUBLE_EQ(g[0][0], 6.0);
}

TEST(TensorBasics, SoftmaxSumHasZeroGradient) {
  const Tensor v = param({5}, 1);
  const auto g = grad(sum(softmax(v)), {v});
  for (double x : g[0].values()) EXPECT_NEAR(x, 0.0, 1e-15);
}

TEST(TensorBasics, NonFiniteOutputThrows) {
  const Tensor x = Tensor::from_values({1}, {1e200});
  EXPECT_THROW(mul(x, x), std::domain_error);
}

TEST(TensorBasics, GradRejectsNonScalarAndForeignParams) {
  const Tensor x = param({3}, 2);
  const Tensor y = param({3}, 3);
  EXPECT_THROW(grad(x, {x}), std::invalid_argument);
  EXPECT_THROW(grad(sum(x), {y}), std::invalid_argument);
}

TEST(TensorBasics, GraphCanBeDifferentiatedTwice) {
  const Tensor x = param({4}, 4);
  const Tensor loss = sum(square(x));
  const auto g1 = grad(loss, {x});
  const auto g2 = grad(loss, {x});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g1[0][i], g2[0][i]);
}

TEST(TensorBasics, SharedSubexpressionAccumulates) {
  const Tensor x = Tensor::from_values({1}, {2.0}, true);
  const Tensor y = mul(x, x);
  const auto g = grad(sum(add(y, y)), {x});
  EXPECT_DOUBLE_EQ(g[0][0], 8.0);
}

TEST(StopGradient, ForwardIsIdentity) {
  const Tensor x = Tensor::from_values({2}, {1.5, -2.0});
  const Tensor y = stop_gradient(x);
  EXPECT_EQ(y[0], 1.5);
  EXPECT_EQ(y[1], -2.0);
}

TEST(StopGradient, StraightThroughGradients) {
  const Tensor z = param({4}, 5);
  const Tensor s = param({4}, 6);
  const Tensor out = add(z, stop_gradient(sub(s, z)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out[i], s[i]);
  const auto gz = grad(sum(out), {z});
  for (double g : gz[0].values()) EXPECT_DOUBLE_EQ(g, 1.0);
  // s only enters under sg.
  const auto gs = grad(sum(out), {s});
  for (double g : gs[0].values()) EXPECT_EQ(g, 0.0);
}

TEST(LayerNorm, AlreadyNormalizedRow) {
  const Tensor x = Tensor::from_values({1, 2}, {1.0, -1.0});
  const Tensor y = layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
  EXPECT_NEAR(y[0], 1.0, 1e-9);
  EXPECT_NEAR(y[1], -1.0, 1e-9);
}

TEST(LayerNorm, ConstantRowMapsToBeta) {
  const Tensor x = Tensor::from_values({1, 3}, {5, 5, 5});
  const Tensor y = layer_norm(x, Tensor::full({3}, 1.0), Tensor::zeros({3}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, GradientRandom4x8) {
  const Tensor x = param({4, 8}, 7);
  const Tensor g = param({8}, 8);
  const Tensor b = param({8}, 9);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(layer_norm(x, g, b)); }, {x, g, b}), kElementaryTol);
}

TEST(Softmax, RowsSumToOne) {
  const Tensor y = softmax(param({3, 5}, 10, 4.0));
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += y[r * 5 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Tensor y = softmax(Tensor::from_values({2}, {1000.0, 999.0}));
  EXPECT_NEAR(y[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

// One finite-difference check per differentiable operation.

struct UnaryCase {
  const char* name;
  std::function<Tensor(const Tensor&)> op;
  Shape shape;
};

class UnaryGrad : public ::testing::TestWithParam<UnaryCase> {};

TEST_P(UnaryGrad, MatchesFiniteDifferences) {
  const UnaryCase& c = GetParam();
  const Tensor x = param(c.shape, 11);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(c.op(x)); }, {x}), kElementaryTol) << c.name;
}

INSTANTIATE_TEST_SUITE_P(
    Ops, UnaryGrad,
    ::testing::Values(
        UnaryCase{"scale", [](const Tensor& x) { return scale(x, -1.7); }, {3, 4}},
        UnaryCase{"add_scalar", [](const Tensor& x) { return add_scalar(x, 0.3); }, {5}},
        UnaryCase{"square", [](const Tensor& x) { return square(x); }, {2, 3, 2}},
        UnaryCase{"tanh", [](const Tensor& x) { return tanh(x); }, {3, 4}},
        UnaryCase{"sigmoid", [](const Tensor& x) { return sigmoid(x); }, {6}},
        UnaryCase{"transpose", [](const Tensor& x) { return transpose(x); }, {3, 5}},
        UnaryCase{"reshape", [](const Tensor& x) { return reshape(x, {6, 2}); }, {3, 4}},
        UnaryCase{"sum", [](const Tensor& x) { return sum(x); }, {2, 3}},
        UnaryCase{"mean", [](const Tensor& x) { return mean(x); }, {2, 3}},
        UnaryCase{"mean_tokens", [](const Tensor& x) { return mean_tokens(x); }, {2, 3, 4}},
        UnaryCase{"sum_last", [](const Tensor& x) { return sum_last(x); }, {2, 3, 4}},
        UnaryCase{"softmax", [](const Tensor& x) { return softmax(x); }, {3, 5}},
        UnaryCase{"softmax3", [](const Tensor& x) { return softmax(x); }, {2, 2, 4}},
        UnaryCase{"normalize_rows", [](const Tensor& x) { return normalize_rows(x); }, {3, 4}},
        UnaryCase{"slice_last", [](const Tensor& x) { return slice_last(x, 1, 2); }, {2, 3, 4}},
        UnaryCase{"split_heads", [](const Tensor& x) { return split_heads(x, 2); }, {2, 3, 4}},
        UnaryCase{"merge_heads", [](const Tensor& x) { return merge_heads(x, 2); }, {4, 3, 2}},
        UnaryCase{"gather_rows",
                  [](const Tensor& x) {
                    const std::vector<std::size_t> rows = {2, 0, 2, 1};
                    return gather_rows(x, rows);
                  },
                  {3, 4}},
        UnaryCase{"gather_rows_repeat",
                  [](const Tensor& x) {
                    const std::vector<std::size_t> rows = {1, 1, 1};
                    return gather_rows(x, rows);
                  },
                  {2, 3}}),
    [](const ::testing::TestParamInfo<UnaryCase>& info) { return std::string(info.param.name); });

TEST(BinaryGrad, Add) {
  const Tensor a = param({3, 4}, 12), b = param({3, 4}, 13);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(add(a, b)); }, {a, b}), kElementaryTol);
}

TEST(BinaryGrad, Sub) {
  const Tensor a = param({3, 4}, 14), b = param({3, 4}, 15);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(sub(a, b)); }, {a, b}), kElementaryTol);
}

TEST(BinaryGrad, Mul) {
  const Tensor a = param({2, 3, 2}, 16), b = param({2, 3, 2}, 17);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(mul(a, b)); }, {a, b}), kElementaryTol);
}

TEST(BinaryGrad, AddBias) {
  const Tensor x = param({2, 3, 4}, 18), b = param({4}, 19);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(add_bias(x, b)); }, {x, b}), kElementaryTol);
}

TEST(BinaryGrad, Matmul) {
  const Tensor a = param({2, 3, 4}, 20), b = param({4, 5}, 21);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(matmul(a, b)); }, {a, b}), kElementaryTol);
}

TEST(BinaryGrad, Bmm) {
  const Tensor a = param({2, 3, 4}, 22), b = param({2, 4, 5}, 23);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(bmm(a, b)); }, {a, b}), kElementaryTol);
}

TEST(BinaryGrad, BmmTransposed) {
  const Tensor a = param({2, 3, 4}, 24), b = param({2, 5, 4}, 25);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(bmm(a, b, true)); }, {a, b}), kElementaryTol);
}

TEST(BinaryGrad, Concat) {
  const Tensor a = param({2, 3}, 26), b = param({2, 2}, 27);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(concat({a, b})); }, {a, b}), kElementaryTol);
}

TEST(BinaryGrad, StackTokens) {
  const Tensor a = param({2, 3}, 28), b = param({2, 3}, 29);
  EXPECT_LT(max_rel_error(
                [&] {
                  const std::vector<Tensor> parts = {a, b, a};
                  return weighted_sum(stack_tokens(parts));
                },
                {a, b}),
            kElementaryTol);
}

TEST(BinaryCrossEntropy, Gradient) {
  const Tensor logits = param({6}, 30);
  const std::vector<double> labels = {1, 0, 0, 1, 1, 0};
  EXPECT_LT(max_rel_error([&] { return binary_cross_entropy(sigmoid(logits), labels); }, {logits}), kElementaryTol);
}

TEST(BinaryCrossEntropy, FormulaOracle) {
  Rng rng(31);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<double> p(50), y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    p[i] = u(rng);
    y[i] = u(rng) < 0.4 ? 1.0 : 0.0;
  }
  double expect = 0.0;
  for (std::size_t i = 0; i < 50; ++i) expect -= y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]);
  expect /= 50.0;
  EXPECT_NEAR(binary_cross_entropy(Tensor::from_values({50}, p), y).item(), expect, 1e-9);
}

TEST(BinaryCrossEntropy, HalfEverywhereIsLn2) {
  const std::vector<double> y = {1, 0, 1, 0};
  EXPECT_NEAR(binary_cross_entropy(Tensor::full({4}, 0.5), y).item(), std::numbers::ln2, 1e-12);
}

TEST(BinaryCrossEntropy, PerfectPredictionsNearZero) {
  const std::vector<double> y = {1, 0, 1};
  const double l = binary_cross_entropy(Tensor::from_values({3}, {1.0, 0.0, 1.0}), y).item();
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-6);
}

TEST(MlpGrad, TwoLayerRandom) {
  Rng rng(32);
  const Mlp mlp = make_mlp(5, 7, 3, Activation::kTanh, rng);
  const Tensor x = param({4, 5}, 33);
  std::vector<Tensor> params = {x};
  mlp.collect(params);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(mlp.forward(x)); }, params), kElementaryTol);
}

}  // namespace
}  // namespace store
