#include <gtest/gtest.h>

#include <cstddef>
#include <vector>

#include "fbk/fb_conv.hpp"
#include "fbk/oracles.hpp"
#include "test_util.hpp"

using namespace fbk;
using test::random_tensor;

namespace {

FbConvLayer<double> random_layer(ConvGeometry g, std::size_t k, Rng& rng) {
  FbConvLayer<double> layer;
  layer.geometry = g;
  layer.params.c = g.out_channels;
  layer.params.n = g.patch_len();
  layer.params.k = k;
  layer.params.weight = random_tensor<double>({layer.params.c, layer.params.n}, rng);
  layer.params.bias = random_tensor<double>({layer.params.c}, rng);
  layer.params.factors = random_tensor<double>({layer.params.c, k, layer.params.n}, rng);
  layer.p = 1.0;
  return layer;
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& d_y) {
  double acc = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * d_y[i];
  return acc;
}

}  // namespace

TEST(FbConvForward, DegenerateSpatialExtentEqualsDenseForward) {
  Rng rng(30);
  ConvGeometry g{5, 3, 1, 1, 1, 0};
  auto layer = random_layer(g, 2, rng);
  auto x = random_tensor<double>({2, 5, 1, 1}, rng);
  auto mask = inference_mask<double>(2, 1.0);

  auto y = fb_conv_forward(x, layer, mask);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 1, 1}));

  auto x_flat = x.reshape({2, 5});
  auto y_dense = fb_forward(x_flat, layer.params, mask);
  EXPECT_LE(test::max_abs_diff(y.reshape({2, 3}), y_dense), 1e-14);
}

TEST(FbConvForward, ZeroFactorsMatchDirectConvolutionReference) {
  Rng rng(31);
  for (std::size_t kernel : {std::size_t{1}, std::size_t{3}}) {
    ConvGeometry g{2, 3, kernel, kernel, 1, kernel / 2};
    auto layer = random_layer(g, 2, rng);
    layer.params.factors.fill(0.0);
    auto x = random_tensor<double>({2, 2, 5, 5}, rng);
    auto mask = inference_mask<double>(2, 1.0);

    auto y = fb_conv_forward(x, layer, mask);
    auto w4 = layer.params.weight.reshape({3, 2, kernel, kernel});
    auto ref = oracles::direct_conv2d(x, w4, layer.params.bias, g.stride, g.pad);
    EXPECT_LE(test::max_abs_diff(y, ref), 1e-10) << "kernel " << kernel;
  }
}

TEST(FbConvForward, GlobalAveragePoolMatchesPerLocationAverage) {
  // 1x1 FB conv followed by a global average equals
  // b + (1/|S|) sum_i (w.x_i + x_i^T F^T F x_i), evaluated termwise by the
  // construction oracle.
  Rng rng(32);
  ConvGeometry g{4, 3, 1, 1, 1, 0};
  auto layer = random_layer(g, 2, rng);
  auto x = random_tensor<double>({1, 4, 3, 2}, rng);
  auto mask = inference_mask<double>(2, 1.0);

  auto y = fb_conv_forward(x, layer, mask);
  const std::size_t s_count = 3 * 2;
  std::vector<double> pooled(3, 0.0);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t s = 0; s < s_count; ++s) pooled[j] += y.data()[j * s_count + s];
    pooled[j] /= static_cast<double>(s_count);
  }

  Tensor<double> features({s_count, 4});
  for (std::size_t s = 0; s < s_count; ++s)
    for (std::size_t ch = 0; ch < 4; ++ch)
      features(s, ch) = x.data()[ch * s_count + s];

  auto report = oracles::fb_construction_oracle(layer.params, features, pooled);
  EXPECT_LE(report.max_abs_diff, 1e-10);
}

TEST(FbConvBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(33);
  ConvGeometry g{2, 2, 3, 3, 1, 1};
  auto layer = random_layer(g, 2, rng);
  auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  auto mask = inference_mask<double>(2, 1.0);

  FbConvCache<double> cache;
  auto y = fb_conv_forward(x, layer, mask, &cache);
  Tensor<double> d_y(y.shape());
  Tensor<double> d_x;
  auto grads = fb_conv_backward(d_y, cache, layer, mask, &d_x);
  EXPECT_EQ(grads.d_bias.max_abs(), 0.0);
  EXPECT_EQ(grads.d_weight.max_abs(), 0.0);
  EXPECT_EQ(grads.d_factors.max_abs(), 0.0);
  EXPECT_EQ(d_x.max_abs(), 0.0);
}

TEST(FbConvBackward, OneByOneKernelReducesToDenseBackward) {
  Rng rng(34);
  ConvGeometry g{5, 3, 1, 1, 1, 0};
  auto layer = random_layer(g, 2, rng);
  auto x = random_tensor<double>({2, 5, 1, 1}, rng);
  auto mask = inference_mask<double>(2, 0.5);

  FbConvCache<double> conv_cache;
  fb_conv_forward(x, layer, mask, &conv_cache);
  auto d_y = random_tensor<double>({2, 3, 1, 1}, rng);
  Tensor<double> d_x;
  auto conv_grads = fb_conv_backward(d_y, conv_cache, layer, mask, &d_x);

  FbForwardCache<double> dense_cache;
  fb_forward(x.reshape({2, 5}), layer.params, mask, &dense_cache);
  auto dense_grads = fb_backward(d_y.reshape({2, 3}), dense_cache, layer.params, mask);

  EXPECT_EQ(test::max_abs_diff(conv_grads.d_weight, dense_grads.d_weight), 0.0);
  EXPECT_EQ(test::max_abs_diff(conv_grads.d_factors, dense_grads.d_factors), 0.0);
  EXPECT_EQ(test::max_abs_diff(conv_grads.d_bias, dense_grads.d_bias), 0.0);
  EXPECT_EQ(test::max_abs_diff(d_x.reshape({2, 5}), dense_grads.d_x), 0.0);
}

TEST(FbConvBackward, MatchesFiniteDifferencesOnThreeByThreeKernel) {
  Rng rng(35);
  ConvGeometry g{2, 2, 3, 3, 1, 1};
  const std::size_t k = 2;
  auto layer = random_layer(g, k, rng);
  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  auto d_y_shape = Shape{1, 2, 5, 5};
  auto d_y = random_tensor<double>(d_y_shape, rng);
  const double h = 1e-5, tol = 1e-5;

  for (MaskMode mode : {MaskMode::training, MaskMode::inference}) {
    DropFactorMask<double> mask;
    if (mode == MaskMode::training) {
      Rng mask_rng(5);
      mask = sample_mask<double>(k, 0.5, mask_rng);
    } else {
      mask = inference_mask<double>(k, 0.7);
    }

    FbConvCache<double> cache;
    fb_conv_forward(x, layer, mask, &cache);
    Tensor<double> d_x;
    auto grads = fb_conv_backward(d_y, cache, layer, mask, &d_x);

    auto loss_with = [&](const FbConvLayer<double>& l, const Tensor<double>& xx) {
      return weighted_sum(fb_conv_forward(xx, l, mask), d_y);
    };

    auto fd_w = oracles::finite_diff_grad(
        [&](const Tensor<double>& w) {
          auto l = layer;
          l.params.weight = w;
          return loss_with(l, x);
        },
        layer.params.weight, h);
    EXPECT_LE(test::max_rel_err(grads.d_weight, fd_w), tol);

    auto fd_f = oracles::finite_diff_grad(
        [&](const Tensor<double>& f) {
          auto l = layer;
          l.params.factors = f;
          return loss_with(l, x);
        },
        layer.params.factors, h);
    EXPECT_LE(test::max_rel_err(grads.d_factors, fd_f), tol);

    auto fd_b = oracles::finite_diff_grad(
        [&](const Tensor<double>& b) {
          auto l = layer;
          l.params.bias = b;
          return loss_with(l, x);
        },
        layer.params.bias, h);
    EXPECT_LE(test::max_rel_err(grads.d_bias, fd_b), tol);

    auto fd_x = oracles::finite_diff_grad(
        [&](const Tensor<double>& xx) { return loss_with(layer, xx); }, x, h);
    EXPECT_LE(test::max_rel_err(d_x, fd_x), tol);
  }
}

TEST(FbConvProperties, TranslationEquivariance) {
  // Stride-1 convolution without padding: shifting the input rows circularly
  // shifts the output rows wherever the window avoids the wrapped columns.
  Rng rng(36);
  ConvGeometry g{2, 2, 3, 3, 1, 0};
  auto layer = random_layer(g, 2, rng);
  auto x = random_tensor<double>({1, 2, 6, 6}, rng);
  auto mask = inference_mask<double>(2, 1.0);

  Tensor<double> shifted(x.shape());
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t col = 0; col < 6; ++col)
        shifted(0, ch, r, col) = x(0, ch, (r + 5) % 6, col);  // shift down by one

  auto y = fb_conv_forward(x, layer, mask);
  auto ys = fb_conv_forward(shifted, layer, mask);
  const std::size_t ho = g.out_h(6), wo = g.out_w(6);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t oy = 1; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        EXPECT_NEAR(ys(0, j, oy, ox), y(0, j, oy - 1, ox), 1e-12);
}

TEST(FbConvProperties, PaddedPositionsEnterQuadraticTermAsZeros) {
  // A corner patch of an all-ones input with pad 1 sees only 4 live cells in
  // a 3x3 window: the quadratic response must equal that of an explicit
  // 4-entry patch, not a 9-entry one.
  Rng rng(37);
  ConvGeometry g{1, 1, 3, 3, 1, 1};
  auto layer = random_layer(g, 1, rng);
  layer.params.weight.fill(0.0);
  layer.params.bias.fill(0.0);
  auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto mask = inference_mask<double>(1, 1.0);
  auto y = fb_conv_forward(x, layer, mask);

  // corner (0,0): live kernel cells are (1,1),(1,2),(2,1),(2,2)
  double proj = 0;
  for (std::size_t ky = 1; ky < 3; ++ky)
    for (std::size_t kx = 1; kx < 3; ++kx) proj += layer.params.factors(0, 0, ky * 3 + kx);
  EXPECT_NEAR(y(0, 0, 0, 0), proj * proj, 1e-12);
}

TEST(FbConvErrors, GeometryAndCacheViolations) {
  Rng rng(38);
  ConvGeometry g{2, 2, 3, 3, 1, 0};
  auto layer = random_layer(g, 1, rng);
  auto mask = inference_mask<double>(1, 1.0);

  auto too_small = random_tensor<double>({1, 2, 2, 2}, rng);
  EXPECT_THROW(fb_conv_forward(too_small, layer, mask), dimension_error);

  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  FbConvCache<double> cache;
  fb_conv_forward(x, layer, mask, &cache);
  auto bad_d_y = random_tensor<double>({1, 2, 4, 4}, rng);
  Tensor<double>* no_dx = nullptr;
  EXPECT_THROW(fb_conv_backward(bad_d_y, cache, layer, mask, no_dx), contract_error);
}
