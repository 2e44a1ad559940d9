#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "avgtime/grad_check.hpp"
#include "avgtime/revin.hpp"

namespace avgtime {
namespace {

TEST(Revin, ConstantWindowNormalizesToZero) {
  auto p = RevinParams::make(1, true);
  auto [y, st] = revin_normalize(Tensor({1, 1, 4}, {3, 3, 3, 3}), p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(st.std[0], kRevinEps);
}

TEST(Revin, TwoPointWindow) {
  auto p = RevinParams::make(1, true);
  auto [y, st] = revin_normalize(Tensor({1, 1, 2}, {1, 3}), p);
  EXPECT_DOUBLE_EQ(y[0], -1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

TEST(Revin, NormalizedWindowsHaveZeroMean) {
  Rng rng(1);
  auto p = RevinParams::make(3, true);
  auto [y, st] = revin_normalize(Tensor::randn({4, 3, 17}, rng, 5.0), p);
  for (std::size_t r = 0; r < 12; ++r) {
    double mu = 0.0;
    for (std::size_t t = 0; t < 17; ++t) mu += y[r * 17 + t];
    EXPECT_LT(std::abs(mu / 17.0), 1e-9);
  }
}

TEST(Revin, ZeroPredictionDenormalizesToLookbackMean) {
  auto p = RevinParams::make(2, true);
  Tensor x({1, 2, 3}, {1, 2, 3, 10, 20, 60});
  auto [y, st] = revin_normalize(x, p);
  auto out = revin_denormalize(Tensor::zeros({1, 2, 5}), st, p);
  for (std::size_t h = 0; h < 5; ++h) {
    EXPECT_DOUBLE_EQ(out[h], 2.0);
    EXPECT_DOUBLE_EQ(out[5 + h], 30.0);
  }
}

TEST(Revin, RoundTripWithAndWithoutAffine) {
  Rng rng(2);
  for (bool affine : {false, true}) {
    auto p = RevinParams::make(3, affine);
    if (affine) {
      p.gain = Tensor({3}, {2.0, 0.5, 1.3}, true);
      p.bias = Tensor({3}, {1.0, -0.4, 0.0}, true);
    }
    Tensor x = Tensor::randn({5, 3, 11}, rng, 4.0);
    auto [y, st] = revin_normalize(x, p);
    auto back = revin_denormalize(y, st, p);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-6);
  }
}

TEST(Revin, DenormalizeRejectsMismatchedState) {
  auto p = RevinParams::make(2, false);
  auto [y, st] = revin_normalize(Tensor::zeros({3, 2, 4}), p);
  EXPECT_THROW(revin_denormalize(Tensor::zeros({2, 2, 4}), st, p), ShapeError);
  EXPECT_THROW(revin_denormalize(Tensor::zeros({3, 3, 4}), st, p), ShapeError);
}

TEST(Revin, ChannelPermutationEquivariance) {
  Rng rng(3);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor x = Tensor::randn({2, 4, 9}, rng);
  auto p = RevinParams::make(4, true);
  p.gain = Tensor::uniform({4}, rng, 0.5, 2.0, true);
  p.bias = Tensor::randn({4}, rng, 1.0, true);

  auto permute = [&](const Tensor& t, std::size_t width) {
    std::vector<double> v(t.size());
    for (std::size_t b = 0; b < t.dim(0); ++b) {
      for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t k = 0; k < width; ++k) v[(b * 4 + c) * width + k] = t[(b * 4 + perm[c]) * width + k];
      }
    }
    return Tensor(t.shape(), v);
  };
  auto pp = p;
  pp.gain = permute(Tensor({1, 4, 1}, std::vector<double>(p.gain.data().begin(), p.gain.data().end())), 1);
  pp.gain = reshape(pp.gain, {4});
  pp.bias = reshape(permute(Tensor({1, 4, 1}, std::vector<double>(p.bias.data().begin(), p.bias.data().end())), 1), {4});

  auto [y, s1] = revin_normalize(x, p);
  auto [yp, s2] = revin_normalize(permute(x, 9), pp);
  auto expected = permute(y, 9);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(yp[i], expected[i]);
}

TEST(Revin, GradientsFlowThroughAffine) {
  Rng rng(4);
  Tensor x = Tensor::randn({2, 3, 6}, rng);
  Tensor target = Tensor::randn({2, 3, 6}, rng);
  auto p = RevinParams::make(3, true);
  p.gain = Tensor::uniform({3}, rng, 0.5, 2.0, true);
  p.bias = Tensor::randn({3}, rng, 0.5, true);
  // Perturb between normalize and denormalize so gain/bias do not cancel.
  Tensor w = Tensor::randn({2, 3, 6}, rng);
  auto loss = [&] {
    auto [y, st] = revin_normalize(x, p);
    return mse(revin_denormalize(multiply(y, w), st, p), target);
  };
  EXPECT_LT(grad_check(loss, {p.gain, p.bias}, 1e-5), 1e-4);
  EXPECT_LT(grad_check(
                [&](const Tensor& v) {
                  auto [y, st] = revin_normalize(v, p);
                  return mse(revin_denormalize(multiply(y, w), st, p), target);
                },
                x, 1e-5),
            1e-4);
}

}  // namespace
}  // namespace avgtime
