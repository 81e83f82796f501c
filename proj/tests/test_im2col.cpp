#include <gtest/gtest.h>

#include <cstddef>
#include <vector>

#include "fbk/im2col.hpp"
#include "test_util.hpp"

using namespace fbk;
using test::random_tensor;

namespace {

// Sliding-window reference: number of padded (out-of-bounds) cells inside
// the window of a given output location.
std::size_t padded_cells_in_window(const ConvGeometry& g, std::size_t h, std::size_t w,
                                   std::size_t oy, std::size_t ox) {
  std::size_t count = 0;
  for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
    for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
      const std::ptrdiff_t iy =
          static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
      const std::ptrdiff_t ix =
          static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix < 0 ||
          ix >= static_cast<std::ptrdiff_t>(w))
        ++count;
    }
  return count * g.in_channels;
}

double inner(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

TEST(Im2col, OneByOneKernelIsAReshape) {
  Rng rng(1);
  auto x = random_tensor<double>({3, 4, 5}, rng);
  ConvGeometry g{3, 1, 1, 1, 1, 0};
  auto cols = im2col(x, g);
  EXPECT_EQ(cols.shape(), (Shape{3, 20}));
  auto reshaped = x.reshape({3, 20});
  EXPECT_TRUE(cols == reshaped);
}

TEST(Im2col, HandEnumeratedTwoByTwoWindows) {
  Tensor<double> x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  ConvGeometry g{1, 1, 2, 2, 1, 0};
  auto cols = im2col(x, g);
  ASSERT_EQ(cols.shape(), (Shape{4, 4}));
  const std::vector<std::vector<double>> expected_cols = {
      {1, 2, 4, 5}, {2, 3, 5, 6}, {4, 5, 7, 8}, {5, 6, 8, 9}};
  for (std::size_t col = 0; col < 4; ++col)
    for (std::size_t row = 0; row < 4; ++row)
      EXPECT_EQ(cols(row, col), expected_cols[col][row]) << "col " << col << " row " << row;
}

TEST(Im2col, PaddedCornerZeroCountMatchesSlidingWindowReference) {
  Rng rng(2);
  // strictly positive values so zeros can only come from padding
  auto x = random_tensor<double>({2, 5, 5}, rng, 0.5, 1.5);
  ConvGeometry g{2, 1, 3, 3, 1, 1};
  auto cols = im2col(x, g);
  const std::size_t wo = g.out_w(5);
  for (std::size_t oy : {std::size_t{0}, std::size_t{4}}) {
    for (std::size_t ox : {std::size_t{0}, std::size_t{4}}) {
      const std::size_t col = oy * wo + ox;
      std::size_t zeros = 0;
      for (std::size_t row = 0; row < cols.extent(0); ++row)
        if (cols(row, col) == 0.0) ++zeros;
      EXPECT_EQ(zeros, padded_cells_in_window(g, 5, 5, oy, ox));
      // corner of a 3x3 kernel with pad 1 keeps only a 2x2 in-bounds block
      EXPECT_EQ(zeros, (g.kernel_h * g.kernel_w - 4) * g.in_channels);
    }
  }
}

TEST(Col2im, OneByOneKernelInvertsIm2col) {
  Rng rng(3);
  auto x = random_tensor<double>({2, 3, 3}, rng);
  ConvGeometry g{2, 1, 1, 1, 1, 0};
  auto roundtrip = col2im(im2col(x, g), g, 3, 3);
  EXPECT_EQ(test::max_abs_diff(x, roundtrip), 0.0);
}

TEST(Col2im, CoverageCountsOnOverlappingWindows) {
  // 2x2 kernel, stride 1 on 3x3: the center element sits in all 4 windows.
  Tensor<double> ones = Tensor<double>::full({1, 3, 3}, 1.0);
  ConvGeometry g{1, 1, 2, 2, 1, 0};
  auto cover = col2im(im2col(ones, g), g, 3, 3);
  EXPECT_EQ(cover(0, 1, 1), 4.0);
  EXPECT_EQ(cover(0, 0, 0), 1.0);
  EXPECT_EQ(cover(0, 0, 1), 2.0);
}

TEST(Col2im, AdjointIdentityOnRandomGeometries) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 1 + rng.integer(3);
    const std::size_t kh = 1 + rng.integer(3);
    const std::size_t kw = 1 + rng.integer(3);
    const std::size_t stride = 1 + rng.integer(2);
    const std::size_t pad = rng.integer(2);
    const std::size_t h = kh + rng.integer(5);
    const std::size_t w = kw + rng.integer(5);
    ConvGeometry g{c, 1, kh, kw, stride, pad};

    auto x = random_tensor<double>({c, h, w}, rng);
    auto cols = im2col(x, g);
    auto y = random_tensor<double>(cols.shape(), rng);
    // <im2col(x), y> == <x, col2im(y)>
    const double lhs = inner(cols, y);
    const double rhs = inner(x, col2im(y, g, h, w));
    EXPECT_LE(std::abs(lhs - rhs), 1e-10) << "geometry trial " << trial;
  }
}

TEST(ConvGeometry, RejectsImpossibleShapes) {
  ConvGeometry g{1, 1, 5, 5, 1, 0};
  Tensor<double> small({1, 3, 3});
  EXPECT_THROW(im2col(small, g), dimension_error);

  ConvGeometry chans{3, 1, 1, 1, 1, 0};
  Tensor<double> wrong({2, 3, 3});
  EXPECT_THROW(im2col(wrong, chans), dimension_error);

  Tensor<double> cols({4, 4});
  ConvGeometry g2{1, 1, 2, 2, 1, 0};
  EXPECT_THROW(col2im(cols, g2, 9, 9), dimension_error);
}
