#pragma once

#include <cstddef>

#include "fbk/rng.hpp"
#include "fbk/tensor.hpp"

namespace fbk::data {

inline constexpr std::size_t kAugmentPad = 4;

namespace detail {

/// Crop the zero-padded image at offset (dy, dx), then optionally mirror.
/// Offset (kAugmentPad, kAugmentPad) with no flip is the identity.
template <typename T>
void augment_one(const Tensor<T>& batch, std::size_t s, std::size_t dy, std::size_t dx,
                 bool flip, Tensor<T>& out) {
  const std::size_t c = batch.extent(1), h = batch.extent(2), w = batch.extent(3);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        // coordinates in the padded image
        const std::ptrdiff_t src_y =
            static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(kAugmentPad);
        const std::size_t col = flip ? (w - 1 - x) : x;
        const std::ptrdiff_t src_x =
            static_cast<std::ptrdiff_t>(col + dx) - static_cast<std::ptrdiff_t>(kAugmentPad);
        T v = 0;
        if (src_y >= 0 && src_y < static_cast<std::ptrdiff_t>(h) && src_x >= 0 &&
            src_x < static_cast<std::ptrdiff_t>(w)) {
          v = batch(s, ch, static_cast<std::size_t>(src_y), static_cast<std::size_t>(src_x));
        }
        out(s, ch, y, x) = v;
      }
}

}  // namespace detail

/// Standard light augmentation: zero-pad each image by 4 pixels, take a
/// random crop at the original size, and flip horizontally with probability
/// one half. Consumes three draws per image (dy, dx, flip).
template <typename T>
Tensor<T> augment(const Tensor<T>& batch, Rng& rng) {
  Tensor<T> out(batch.shape());
  for (std::size_t s = 0; s < batch.extent(0); ++s) {
    const std::size_t dy = static_cast<std::size_t>(rng.integer(2 * kAugmentPad + 1));
    const std::size_t dx = static_cast<std::size_t>(rng.integer(2 * kAugmentPad + 1));
    const bool flip = rng.bernoulli(0.5);
    detail::augment_one(batch, s, dy, dx, flip, out);
  }
  return out;
}

/// Horizontal mirror of every image in the batch.
template <typename T>
Tensor<T> hflip(const Tensor<T>& batch) {
  const std::size_t n = batch.extent(0), c = batch.extent(1), h = batch.extent(2),
                    w = batch.extent(3);
  Tensor<T> out(batch.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out(s, ch, y, x) = batch(s, ch, y, w - 1 - x);
  return out;
}

}  // namespace fbk::data
