#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "gradcheck.hpp"
#include "op_cases.hpp"
#include "unmix/error.hpp"
#include "unmix/ops.hpp"

using namespace unmix;
using unmix::test::op_cases;
using unmix::test::op_gradient_error;
using unmix::test::random_off_zero;
using unmix::test::random_tensor;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Elementwise, AddIsComponentwise) {
  auto a = Tensor::from({2}, {1, 2});
  auto b = Tensor::from({2}, {3, 4});
  EXPECT_EQ(values(add(a, b)), (std::vector<float>{4, 6}));
}

TEST(Elementwise, ScaleByOneIsBitwiseIdentity) {
  Rng rng(3);
  auto x = random_tensor({5, 7}, rng);
  EXPECT_EQ(values(scale(x, 1.0f)), values(x));
}

TEST(Elementwise, SquareDerivativeAtThree) {
  auto x = Tensor::from({1}, {3.0f}, true);
  sum(mul(x, x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({3, 2});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, ReusedInputAccumulatesGradient) {
  auto x = Tensor::from({1}, {2.0f}, true);
  sum(add(mul(x, x), x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 5.0f);
}

TEST(Matmul, IdentityTimesX) {
  auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(1);
  auto x = random_tensor({3, 4}, rng);
  EXPECT_EQ(values(matmul(eye, x)), values(x));
}

TEST(Matmul, HandComputed) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 1}, {1, 1});
  EXPECT_EQ(values(matmul(a, b)), (std::vector<float>{3, 7}));
}

TEST(Matmul, InnerDimensionMismatch) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const double err = op_gradient_error([](const auto& in) { return matmul(in[0], in[1]); },
                                         {random_tensor({4, 5}, rng, -1, 1, true), random_tensor({5, 3}, rng, -1, 1, true)},
                                         rng);
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(2);
  auto x = random_tensor({2, 3, 5, 5}, rng);
  std::vector<float> w(9, 0.0f);
  for (int i = 0; i < 3; ++i) w[static_cast<std::size_t>(i * 3 + i)] = 1.0f;
  auto y = conv2d(x, Tensor::from({3, 3, 1, 1}, w), 1, 0);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(values(y), values(x));
}

TEST(Conv2d, OnesKernelOnConstantImage) {
  const float c = 0.75f;
  auto x = Tensor::full({1, 1, 6, 6}, c);
  auto y = conv2d(x, Tensor::full({1, 1, 3, 3}, 1.0f), 1, 1);
  for (int r = 1; r < 5; ++r)
    for (int col = 1; col < 5; ++col) EXPECT_FLOAT_EQ(y.at({0, 0, r, col}), 9 * c);
  EXPECT_FLOAT_EQ(y.at({0, 0, 0, 0}), 4 * c);
}

TEST(Conv2d, OutputExtent) {
  for (int h : {5, 6, 7, 8})
    for (int stride : {1, 2, 3})
      for (int pad : {0, 1, 2}) {
        auto y = conv2d(Tensor::zeros({1, 2, h, h}), Tensor::zeros({4, 2, 3, 3}), stride, pad);
        const int expect = (h + 2 * pad - 3) / stride + 1;
        EXPECT_EQ(y.shape(), (Shape{1, 4, expect, expect}));
      }
}

TEST(Conv2d, RejectsInvalidStrideAndPad) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 0, 0), ValueError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 1, -1), ValueError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), 1, 0), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 1, 0), ShapeError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int stride = 1 + trial % 2;
    const int pad = trial % 3 == 0 ? 0 : 1;
    const double err = op_gradient_error(
        [&](const auto& in) { return conv2d(in[0], in[1], stride, pad); },
        {random_tensor({2, 2, 6, 6}, rng, -1, 1, true), random_tensor({3, 2, 3, 3}, rng, -1, 1, true)}, rng);
    EXPECT_LT(err, 1e-3) << "trial " << trial;
  }
}

TEST(Activations, Relu) { EXPECT_EQ(values(relu(Tensor::from({2}, {-1, 2}))), (std::vector<float>{0, 2})); }

TEST(Activations, L2NormalizeThreeFourFive) {
  auto y = l2_normalize(Tensor::from({1, 2}, {3, 4}));
  EXPECT_FLOAT_EQ(y.at({0, 0}), 0.6f);
  EXPECT_FLOAT_EQ(y.at({0, 1}), 0.8f);
}

TEST(Activations, L2NormalizeRowsAreUnit) {
  Rng rng(4);
  auto y = l2_normalize(random_tensor({50, 13}, rng, -10, 10));
  for (int i = 0; i < 50; ++i) {
    double s = 0;
    for (int j = 0; j < 13; ++j) s += double(y.at({i, j})) * y.at({i, j});
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-6);
  }
}

TEST(Activations, L2NormalizeZeroRowThrows) {
  EXPECT_THROW(l2_normalize(Tensor::from({2, 2}, {1, 0, 0, 0})), NumericError);
}

TEST(Activations, LogSoftmaxRowsExponentiateToOne) {
  Rng rng(5);
  auto y = log_softmax(random_tensor({20, 9}, rng, -30, 30));
  for (int i = 0; i < 20; ++i) {
    double s = 0;
    for (int j = 0; j < 9; ++j) s += std::exp(double(y.at({i, j})));
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

// At eps = 1e-3 the float32 rounding of the outputs alone is ~1e-4 of the
// gradient, so this tighter check uses a wider step.
TEST(Activations, LogSoftmaxGradient) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const double err = op_gradient_error([](const auto& in) { return log_softmax(in[0]); },
                                         {random_tensor({4, 6}, rng, -2, 2, true)}, rng, 1e-2f);
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}


TEST(Gradients, EveryOpMatchesFiniteDifferences) {
  Rng rng(21);
  for (const auto& c : op_cases())
    for (int trial = 0; trial < 20; ++trial)
      EXPECT_LT(op_gradient_error(c.op, c.inputs(rng), rng, c.eps), 1e-3) << c.name << " trial " << trial;
}

TEST(Gradients, BackwardIsBitwiseReproducible) {
  auto run = [] {
    Rng rng(99);
    auto x = random_tensor({2, 3, 6, 6}, rng, -1, 1, true);
    auto w = random_tensor({4, 3, 3, 3}, rng, -1, 1, true);
    auto y = log_softmax(reshape(global_avg_pool(relu(conv2d(x, w, 2, 1))), {2, 4}));
    sum(mul(y, random_tensor({2, 4}, rng))).backward();
    return std::make_pair(values(Tensor::from(x.shape(), {x.grad().begin(), x.grad().end()})),
                          values(Tensor::from(w.shape(), {w.grad().begin(), w.grad().end()})));
  };
  EXPECT_EQ(run(), run());
}

TEST(Gradients, OpsDoNotMutateInputs) {
  Rng rng(31);
  for (const auto& c : op_cases()) {
    auto in = c.inputs(rng);
    std::vector<std::vector<float>> before;
    for (const auto& t : in) before.push_back(values(t));
    auto out = c.op(in);
    sum(mul(out, random_tensor(out.shape(), rng))).backward();
    for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(values(in[i]), before[i]) << c.name;
  }
}

TEST(Graph, NoGradGuardRecordsNothing) {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Graph, EveryRequiresGradAncestorGetsGradient) {
  Rng rng(41);
  auto a = random_tensor({3, 4}, rng, -1, 1, true);
  auto b = random_tensor({4, 2}, rng, -1, 1, true);
  auto bias = random_tensor({2}, rng, -1, 1, true);
  mean(relu(add_bias(matmul(a, b), bias))).backward();
  for (const Tensor* t : {&a, &b, &bias}) {
    EXPECT_TRUE(t->has_grad());
    EXPECT_EQ(t->grad().size(), static_cast<std::size_t>(t->numel()));
  }
}

TEST(Graph, BatchNormTrainUpdatesRunningStats) {
  auto x = Tensor::from({4, 1}, {1, 2, 3, 4});
  auto g = Tensor::full({1}, 1.0f), b = Tensor::zeros({1});
  auto rm = Tensor::zeros({1}), rv = Tensor::full({1}, 1.0f);
  batch_norm(x, g, b, rm, rv, true);
  EXPECT_NEAR(rm.item(), 0.1 * 2.5, 1e-6);
  EXPECT_NEAR(rv.item(), 0.9 + 0.1 * (5.0 / 3.0), 1e-6);
}
