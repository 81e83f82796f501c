#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "fbk/errors.hpp"
#include "fbk/nn/layers.hpp"
#include "fbk/nn/network.hpp"
#include "fbk/rng.hpp"

namespace fbk::nn {

/// Knobs shared by the ready-made network presets.
struct PresetSpec {
  std::string name = "fb-dense";  // linear | fb-dense | baseline | conv-fbn
  std::size_t classes = 10;

  // vector presets
  std::size_t input_dim = 16;

  // image presets
  std::size_t in_channels = 3;
  std::size_t in_h = 32, in_w = 32;
  std::vector<std::size_t> trunk_channels = {8, 16, 32};

  // FB settings
  std::size_t k = 20;
  double p = 0.5;
  std::size_t fb_kernel = 1;  // 1 or 3 for the conv-fbn head
  double sigma_f = -1;        // factor init stddev; <= 0 picks sqrt(1/(k n))
  bool inverted_dropfactor = false;
  bool decay_factors = true;

  // optional unit dropout ahead of the FB head (comparison studies)
  double dropout_keep = 1.0;
};

/// Builds one of the named desk-scale networks. The two image presets share
/// an identical conv trunk and differ only in the head: the baseline pools
/// then classifies linearly, the conv-fbn variant squashes with tanh and
/// classifies with a factorized bilinear convolution before pooling.
template <typename T>
Network<T> build_preset(const PresetSpec& s, Rng& init_rng) {
  Network<T> net;

  if (s.name == "linear") {
    net.add(std::make_unique<Linear<T>>(s.input_dim, s.classes, init_rng));
    return net;
  }

  if (s.name == "fb-dense") {
    net.add(std::make_unique<FbDense<T>>(s.input_dim, s.classes, s.k, static_cast<T>(s.p),
                                         init_rng, static_cast<T>(s.sigma_f),
                                         s.inverted_dropfactor, s.decay_factors));
    return net;
  }

  if (s.name == "baseline" || s.name == "conv-fbn") {
    std::size_t ch = s.in_channels;
    for (std::size_t out : s.trunk_channels) {
      net.add(std::make_unique<Conv2d<T>>(ConvGeometry{ch, out, 3, 3, 1, 1}, init_rng));
      net.add(std::make_unique<BatchNorm<T>>(out));
      net.add(std::make_unique<ReLU<T>>());
      net.add(std::make_unique<MaxPool2d<T>>(2));
      ch = out;
    }
    if (s.name == "baseline") {
      net.add(std::make_unique<GlobalAvgPool<T>>());
      net.add(std::make_unique<Linear<T>>(ch, s.classes, init_rng));
    } else {
      net.add(std::make_unique<Tanh<T>>());
      if (s.dropout_keep < 1.0)
        net.add(std::make_unique<Dropout<T>>(static_cast<T>(s.dropout_keep)));
      if (s.fb_kernel != 1 && s.fb_kernel != 3)
        throw config_error("conv-fbn head kernel must be 1 or 3, got " +
                           std::to_string(s.fb_kernel));
      ConvGeometry g{ch, s.classes, s.fb_kernel, s.fb_kernel, 1, s.fb_kernel / 2};
      auto fb = std::make_unique<FbConv<T>>(g, s.k, static_cast<T>(s.p), init_rng,
                                            static_cast<T>(s.sigma_f), s.inverted_dropfactor,
                                            s.decay_factors);
      fb->set_bounded_input_check(true);  // tanh sits directly upstream
      net.add(std::move(fb));
      net.add(std::make_unique<GlobalAvgPool<T>>());
    }
    return net;
  }

  throw config_error("unknown preset '" + s.name + "'");
}

}  // namespace fbk::nn
