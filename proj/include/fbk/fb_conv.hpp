#pragma once

#include <cstddef>
#include <string>

#include "fbk/errors.hpp"
#include "fbk/fb_layer.hpp"
#include "fbk/im2col.hpp"
#include "fbk/tensor.hpp"

namespace fbk {

/// Factorized bilinear convolution: the dense FB transform applied to every
/// im2col patch. The patch vector (length in_channels * kernel_h * kernel_w)
/// plays the role of the dense layer's input, so padded positions enter the
/// quadratic term as zeros. One DropFactor mask is shared across all spatial
/// locations and samples of a mini-batch.
template <typename T>
struct FbConvLayer {
  ConvGeometry geometry;
  FbLayerParams<T> params;
  T p = 1;

  void validate() const {
    if (params.n != geometry.patch_len() || params.c != geometry.out_channels) {
      throw dimension_error(
          "fb conv layer: params are [c=" + std::to_string(params.c) + ", n=" +
          std::to_string(params.n) + "], geometry wants [c=" +
          std::to_string(geometry.out_channels) + ", n=" +
          std::to_string(geometry.patch_len()) + "]");
    }
  }
};

template <typename T>
FbConvLayer<T> init_fb_conv(const ConvGeometry& g, std::size_t k, T p, Rng& rng,
                            T sigma_f = T(-1)) {
  FbConvLayer<T> layer;
  layer.geometry = g;
  layer.params = init_fb_params<T>(g.out_channels, g.patch_len(), k, rng, sigma_f);
  layer.p = p;
  return layer;
}

template <typename T>
struct FbConvCache {
  FbForwardCache<T> dense;  // patches flattened to [(batch*Ho*Wo) x n]
  std::size_t batch = 0, h = 0, w = 0, ho = 0, wo = 0;
};

namespace detail {

/// Stacks im2col patches of a whole batch as rows: [(batch*Ho*Wo) x n].
template <typename T>
Tensor<T> batch_patches(const Tensor<T>& x, const ConvGeometry& g) {
  const std::size_t batch = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t ho = g.out_h(h), wo = g.out_w(w), n = g.patch_len();
  Tensor<T> rows({batch * ho * wo, n});
  for (std::size_t s = 0; s < batch; ++s) {
    Tensor<T> sample({c, h, w});
    const T* src = x.data() + s * c * h * w;
    std::copy(src, src + c * h * w, sample.data());
    Tensor<T> cols = im2col(sample, g);  // [n x ho*wo]
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t pidx = 0; pidx < ho * wo; ++pidx)
        rows(s * ho * wo + pidx, i) = cols(i, pidx);
  }
  return rows;
}

}  // namespace detail

/// Applies the FB transform to every patch of every sample. Output location
/// (s, :, oy, ox) is fb_forward of the corresponding im2col column.
template <typename T>
Tensor<T> fb_conv_forward(const Tensor<T>& x, const FbConvLayer<T>& layer,
                          const DropFactorMask<T>& mask, FbConvCache<T>* cache = nullptr,
                          MacCounter* macs = nullptr) {
  layer.validate();
  if (x.rank() != 4) {
    throw dimension_error("fb_conv_forward expects a batch x C x H x W tensor, got " +
                          shape_str(x.shape()));
  }
  const ConvGeometry& g = layer.geometry;
  const std::size_t batch = x.extent(0), h = x.extent(2), w = x.extent(3);
  g.validate(x.extent(1), h, w);
  const std::size_t ho = g.out_h(h), wo = g.out_w(w), c = g.out_channels;

  Tensor<T> patches = detail::batch_patches(x, g);
  Tensor<T> y_rows = fb_forward(patches, layer.params, mask,
                                cache ? &cache->dense : nullptr, macs);
  if (cache) {
    cache->batch = batch;
    cache->h = h;
    cache->w = w;
    cache->ho = ho;
    cache->wo = wo;
  }

  Tensor<T> y({batch, c, ho, wo});
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t pidx = 0; pidx < ho * wo; ++pidx)
      for (std::size_t j = 0; j < c; ++j)
        y.data()[(s * c + j) * ho * wo + pidx] = y_rows(s * ho * wo + pidx, j);
  return y;
}

/// Backward pass: parameter gradients sum over batch and spatial locations;
/// patch-space input gradients are scattered back through col2im.
template <typename T>
FbGradients<T> fb_conv_backward(const Tensor<T>& d_y, const FbConvCache<T>& cache,
                                const FbConvLayer<T>& layer, const DropFactorMask<T>& mask,
                                Tensor<T>* d_x_out) {
  layer.validate();
  const ConvGeometry& g = layer.geometry;
  const std::size_t batch = cache.batch, ho = cache.ho, wo = cache.wo, c = g.out_channels;
  if (d_y.rank() != 4 || d_y.extent(0) != batch || d_y.extent(1) != c ||
      d_y.extent(2) != ho || d_y.extent(3) != wo) {
    throw contract_error("fb_conv_backward: upstream gradient " + shape_str(d_y.shape()) +
                         " does not match the cached forward output");
  }

  Tensor<T> d_rows({batch * ho * wo, c});
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t pidx = 0; pidx < ho * wo; ++pidx)
      for (std::size_t j = 0; j < c; ++j)
        d_rows(s * ho * wo + pidx, j) = d_y.data()[(s * c + j) * ho * wo + pidx];

  FbGradients<T> grads = fb_backward(d_rows, cache.dense, layer.params, mask);

  if (d_x_out) {
    const std::size_t n = g.patch_len();
    Tensor<T> d_x({batch, g.in_channels, cache.h, cache.w});
    for (std::size_t s = 0; s < batch; ++s) {
      Tensor<T> cols({n, ho * wo});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t pidx = 0; pidx < ho * wo; ++pidx)
          cols(i, pidx) = grads.d_x(s * ho * wo + pidx, i);
      Tensor<T> dxs = col2im(cols, g, cache.h, cache.w);
      std::copy(dxs.data(), dxs.data() + dxs.numel(),
                d_x.data() + s * dxs.numel());
    }
    *d_x_out = std::move(d_x);
  }
  return grads;
}

}  // namespace fbk
