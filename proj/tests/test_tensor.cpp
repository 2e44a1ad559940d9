#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "avgtime/grad_check.hpp"
#include "avgtime/ops.hpp"
#include "support/primitive_cases.hpp"

namespace avgtime {
namespace {

using testing_support::primitive_cases;
using testing_support::random_shape;
using testing_support::weighted_sum;

TEST(Ops, MatmulIdentityReturnsOperand) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  auto y = matmul(eye, a);
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y[i], a[i]);
}

TEST(Ops, MatmulBatchedAndShared) {
  Tensor a({2, 1, 2}, {1, 2, 3, 4});
  Tensor w({2, 1}, {10, 1});
  auto y = matmul(a, w);
  EXPECT_EQ(y.shape(), (Shape{2, 1, 1}));
  EXPECT_EQ(y[0], 12);
  EXPECT_EQ(y[1], 34);
  Tensor b({2, 2, 1}, {1, 1, 2, 0});
  auto z = matmul(a, b);
  EXPECT_EQ(z[0], 3);
  EXPECT_EQ(z[1], 6);
}

TEST(Ops, MatmulRejectsMismatchedInnerExtents) {
  Tensor a({2, 3}, std::vector<double>(6, 1.0));
  Tensor b({2, 2}, std::vector<double>(4, 1.0));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("3 vs 2"), std::string::npos);
  }
}

TEST(Ops, SoftmaxOfUniformLogits) {
  auto y = softmax(Tensor({1, 3}, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y[i], 1.0 / 3.0);
}

TEST(Ops, ActivationFixedPoints) {
  EXPECT_EQ(gelu(Tensor({1}, {0.0}))[0], 0.0);
  EXPECT_EQ(relu(Tensor({1}, {-2.0}))[0], 0.0);
  EXPECT_EQ(relu(Tensor({1}, {2.5}))[0], 2.5);
}

TEST(Ops, DropoutRateValidation) {
  Rng rng(1);
  Tensor x({3}, {1, 2, 3});
  EXPECT_THROW(dropout(x, 1.0, rng, true), std::invalid_argument);
  EXPECT_THROW(dropout(x, -0.1, rng, true), std::invalid_argument);
}

TEST(Ops, DropoutIdentityCases) {
  Rng rng(3);
  Tensor x = Tensor::randn({4, 5}, rng);
  auto a = dropout(x, 0.0, rng, true);
  auto b = dropout(x, 0.7, rng, false);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(a[i], x[i]);
    EXPECT_EQ(b[i], x[i]);
  }
}

TEST(Ops, DropoutInvertedScaling) {
  Rng rng(5);
  Tensor x = Tensor::full({20000}, 1.0);
  auto y = dropout(x, 0.25, rng, true);
  double total = 0.0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    total += v;
  }
  EXPECT_NEAR(total / 20000.0, 1.0, 0.02);
}

TEST(Ops, ConcatAndSliceAreInverse) {
  Rng rng(7);
  Tensor a = Tensor::randn({2, 3, 4}, rng);
  Tensor b = Tensor::randn({2, 3, 2}, rng);
  auto c = concat({a, b}, 2);
  EXPECT_EQ(c.shape(), (Shape{2, 3, 6}));
  auto back = slice(c, 2, 4, 6);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(back[i], b[i]);
  EXPECT_THROW(slice(c, 2, 4, 7), ShapeError);
  EXPECT_THROW(concat({a, Tensor::zeros({2, 2, 2})}, 2), ShapeError);
}

TEST(Ops, TransposeSwapsLastAxes) {
  Tensor a({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  auto t = transpose(a);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 2}));
  EXPECT_EQ(t[1], 4);
  EXPECT_EQ(t[2], 2);
}

TEST(Ops, AddBroadcastsTrailingSuffixOnly) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3}, {10, 20, 30});
  auto y = add(a, b);
  EXPECT_EQ(y[3], 14);
  EXPECT_THROW(add(a, Tensor({2}, {1, 2})), ShapeError);
}

TEST(Ops, MseValue) {
  EXPECT_DOUBLE_EQ(mse(Tensor({1}, {0.0}), Tensor({1}, {3.0})).item(), 9.0);
  EXPECT_THROW(mse(Tensor({1}, {0.0}), Tensor({2}, {0.0, 1.0})), ShapeError);
}

TEST(Backward, SumOfSquares) {
  Tensor x({2}, {1, 2}, true);
  backward(sum(multiply(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, MseAgainstItselfHasZeroGradient) {
  Tensor x({3}, {1, -2, 5}, true);
  backward(mse(x, x));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x({2}, {1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Backward, ReassignsRatherThanAccumulates) {
  Tensor x({2}, {1, 2}, true);
  backward(sum(x));
  backward(sum(x));
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor x({1}, {3}, true);
  Tensor y = multiply(x, x);
  backward(sum(add(y, y)));  // 2x^2 -> 4x
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = sum(multiply(x, x));
  }
  EXPECT_FALSE(y.requires_grad());
}

// Two-layer MLP gradients agree with central differences.
TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({4, 3}, rng);
    Tensor w1 = Tensor::randn({3, 5}, rng, 1.0, true), b1 = Tensor::randn({5}, rng, 1.0, true);
    Tensor w2 = Tensor::randn({5, 2}, rng, 1.0, true), b2 = Tensor::randn({2}, rng, 1.0, true);
    Tensor y = Tensor::randn({4, 2}, rng);
    auto loss = [&] { return mse(add(matmul(gelu(add(matmul(x, w1), b1)), w2), b2), y); };
    EXPECT_LT(grad_check(loss, {w1, b1, w2, b2}, 1e-5), 1e-4) << "seed " << seed;
  }
}

TEST(GradCheck, SumOfSquares) {
  Rng rng(11);
  Tensor x = Tensor::randn({3}, rng);
  EXPECT_LT(grad_check([](const Tensor& v) { return sum(multiply(v, v)); }, x, 1e-5), 1e-7);
}

TEST(GradCheck, MseOfLinearMap) {
  Rng rng(12);
  Tensor w = Tensor::randn({3, 4}, rng);
  Tensor y = Tensor::randn({3, 1}, rng);
  Tensor x = Tensor::randn({4, 1}, rng);
  EXPECT_LT(grad_check([&](const Tensor& v) { return mse(matmul(w, v), y); }, x, 1e-5), 1e-6);
}

TEST(GradCheck, ConstantFunctionIsExact) {
  Tensor x({3}, {1, 2, 3});
  EXPECT_EQ(grad_check([](const Tensor&) { return Tensor::scalar(4.0); }, x, 1e-5), 0.0);
}

TEST(GradCheck, RejectsNonFinite) {
  Tensor x({1}, {1.0});
  EXPECT_THROW(grad_check([](const Tensor&) { return Tensor::scalar(std::nan("")); }, x, 1e-5), std::domain_error);
  EXPECT_THROW(grad_check([](const Tensor& v) { return sum(v); }, x, 0.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Properties over seeded random shapes.

TEST(Properties, EveryPrimitivePassesGradCheck) {
  for (const auto& c : primitive_cases()) EXPECT_LT(testing_support::primitive_worst_error(c), 1e-4) << c.name;
}

TEST(Properties, SoftmaxRowsAreDistributions) {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(trial);
    Tensor y = softmax(Tensor::randn(random_shape(rng), rng, 5.0));
    const std::size_t w = y.dim(2);
    for (std::size_t r = 0; r < y.size() / w; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < w; ++j) {
        EXPECT_GE(y[r * w + j], 0.0);
        total += y[r * w + j];
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Properties, LayerNormStandardizesRows) {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(trial);
    // Output variance is s2 / (s2 + eps) for input row variance s2, so it is
    // within 1e-6 of 1 once s2 >= 10.
    Tensor x = Tensor::randn({4, 16}, rng, 10.0);
    Tensor y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
    for (std::size_t r = 0; r < 4; ++r) {
      auto moments = [&](const Tensor& t) {
        double mu = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 16; ++j) mu += t[r * 16 + j];
        mu /= 16.0;
        for (std::size_t j = 0; j < 16; ++j) var += (t[r * 16 + j] - mu) * (t[r * 16 + j] - mu);
        return std::pair(mu, var / 16.0);
      };
      auto [in_mu, in_var] = moments(x);
      auto [mu, var] = moments(y);
      EXPECT_LT(std::abs(mu), 1e-9);
      EXPECT_NEAR(var, in_var / (in_var + kLayerNormEps), 1e-12);
      if (in_var >= 10.0) {
        EXPECT_NEAR(var, 1.0, 1e-6);
      }
    }
  }
}

TEST(Properties, IdenticalSeedsGiveBitwiseIdenticalResults) {
  auto run = [] {
    Rng rng(99);
    Tensor w = Tensor::randn({6, 4}, rng, 1.0, true);
    Tensor x = Tensor::randn({3, 6}, rng);
    Tensor h = dropout(gelu(matmul(x, w)), 0.5, rng, true);
    Tensor loss = mean(multiply(softmax(h), h));
    backward(loss);
    std::vector<double> out(w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Properties, RngStreamsRepeat) {
  Rng a(42), b(42), c(43);
  std::vector<double> va, vb, vc;
  for (int i = 0; i < 50; ++i) {
    va.push_back(a.normal());
    vb.push_back(b.normal());
    vc.push_back(c.normal());
  }
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}

}  // namespace
}  // namespace avgtime
