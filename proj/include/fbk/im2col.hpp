#pragma once

#include <cstddef>
#include <string>

#include "fbk/errors.hpp"
#include "fbk/tensor.hpp"

namespace fbk {

/// Convolution geometry. Output extent along an axis of size `in` is
/// (in + 2*pad - kernel) / stride + 1 and must be at least 1.
struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t patch_len() const { return in_channels * kernel_h * kernel_w; }

  std::size_t out_extent(std::size_t in, std::size_t kernel) const {
    if (stride == 0) throw dimension_error("conv geometry: stride must be positive");
    if (in + 2 * pad < kernel) {
      throw dimension_error("conv geometry: kernel " + std::to_string(kernel) +
                            " exceeds padded input " + std::to_string(in + 2 * pad));
    }
    return (in + 2 * pad - kernel) / stride + 1;
  }

  std::size_t out_h(std::size_t h) const { return out_extent(h, kernel_h); }
  std::size_t out_w(std::size_t w) const { return out_extent(w, kernel_w); }

  void validate(std::size_t c, std::size_t h, std::size_t w) const {
    if (c != in_channels) {
      throw dimension_error("conv geometry: input has " + std::to_string(c) +
                            " channels, layer expects " + std::to_string(in_channels));
    }
    out_h(h);
    out_w(w);
  }
};

/// Rearranges convolution patches into matrix columns. Column i holds the
/// flattened receptive field of output location i (row-major over output
/// positions); within a column the layout is channel-major, then row-major
/// over the kernel window. Padded positions contribute zeros. Every consumer
/// of patch matrices in this library shares this ordering.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, const ConvGeometry& g) {
  if (x.rank() != 3) {
    throw dimension_error("im2col expects a CxHxW tensor, got " + shape_str(x.shape()));
  }
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  g.validate(c, h, w);
  const std::size_t ho = g.out_h(h), wo = g.out_w(w);
  const std::size_t rows = g.patch_len(), cols = ho * wo;

  Tensor<T> out({rows, cols});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t r = (ch * g.kernel_h + ky) * g.kernel_w + kx;
        T* orow = out.row(r);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            T v = 0;
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(w)) {
              v = x(ch, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
            orow[oy * wo + ox] = v;
          }
        }
      }
    }
  }
  return out;
}

/// Adjoint of im2col: scatters patch columns back onto the CxHxW grid,
/// summing overlapping contributions. col2im(im2col(x)) multiplies each
/// element of x by the number of windows covering it.
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, const ConvGeometry& g, std::size_t h,
                 std::size_t w) {
  const std::size_t c = g.in_channels;
  g.validate(c, h, w);
  const std::size_t ho = g.out_h(h), wo = g.out_w(w);
  if (cols.rank() != 2 || cols.extent(0) != g.patch_len() || cols.extent(1) != ho * wo) {
    throw dimension_error("col2im: columns " + shape_str(cols.shape()) +
                          " do not match geometry patches [" +
                          std::to_string(g.patch_len()) + "x" + std::to_string(ho * wo) + "]");
  }

  Tensor<T> x({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t r = (ch * g.kernel_h + ky) * g.kernel_w + kx;
        const T* crow = cols.row(r);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            x(ch, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                crow[oy * wo + ox];
          }
        }
      }
    }
  }
  return x;
}

}  // namespace fbk
