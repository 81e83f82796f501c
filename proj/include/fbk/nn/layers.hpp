#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fbk/errors.hpp"
#include "fbk/fb_conv.hpp"
#include "fbk/fb_layer.hpp"
#include "fbk/im2col.hpp"
#include "fbk/nn/optimizer.hpp"
#include "fbk/rng.hpp"
#include "fbk/tensor.hpp"

namespace fbk::nn {

/// Sequential-network layer. All forward/backward state lives inside the
/// layer instance, so a layer must see its own forward before backward.
/// Shapes exclude the batch dimension.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual Tensor<T> backward(const Tensor<T>& d_out) = 0;
  virtual std::vector<ParamRef<T>> params() { return {}; }
  /// Non-parameter tensors that belong in a checkpoint (running statistics).
  virtual std::vector<std::pair<std::string, Tensor<T>*>> extra_state() { return {}; }
  virtual void resample_mask(Rng&) {}
  virtual bool is_fb() const { return false; }
  virtual std::string describe() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual std::unique_ptr<Layer<T>> clone() const = 0;
};

// ---------------------------------------------------------------------------
// Dense transforms

/// Plain fully connected layer, realized as the k = 0 case of the factorized
/// bilinear kernel so baselines and FB layers share one code path.
template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : params_(init_fb_params<T>(out, in, 0, rng)) {}

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    return fb_forward(x, params_, inference_mask<T>(0, T(1)), &cache_, nullptr);
  }

  Tensor<T> backward(const Tensor<T>& d_out) override {
    auto g = fb_backward(d_out, cache_, params_, cache_.mask);
    d_weight_ = std::move(g.d_weight);
    d_bias_ = std::move(g.d_bias);
    return std::move(g.d_x);
  }

  std::vector<ParamRef<T>> params() override {
    return {{&params_.weight, &d_weight_, "weight", true, false},
            {&params_.bias, &d_bias_, "bias", true, false}};
  }

  std::string describe() const override {
    return "linear " + std::to_string(params_.n) + "->" + std::to_string(params_.c);
  }

  Shape output_shape(const Shape&) const override { return {params_.c}; }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }

  FbLayerParams<T>& fb_params() { return params_; }

 private:
  FbLayerParams<T> params_;
  FbForwardCache<T> cache_;
  Tensor<T> d_weight_{Shape{0}}, d_bias_{Shape{0}};
};

/// Factorized bilinear fully connected layer with DropFactor.
template <typename T>
class FbDense : public Layer<T> {
 public:
  FbDense(std::size_t in, std::size_t out, std::size_t k, T p, Rng& rng, T sigma_f = T(-1),
          bool inverted = false, bool decay_factors = true)
      : params_(init_fb_params<T>(out, in, k, rng, sigma_f)),
        p_(p),
        inverted_(inverted),
        decay_factors_(decay_factors) {
    check_retain_probability(p_);
    train_mask_.p = p_;
    train_mask_.mode = MaskMode::training;
    train_mask_.kept.assign(k, 1);
    train_mask_.train_gain = inverted_ ? T(1) / p_ : T(1);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    if (bounded_input_check_) check_bounded(x);
    used_mask_ = training ? train_mask_ : eval_mask();
    auto y = fb_forward(x, params_, used_mask_, &cache_, nullptr);
    if (bounded_input_check_) check_projection_bound();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& d_out) override {
    auto g = fb_backward(d_out, cache_, params_, used_mask_);
    d_weight_ = std::move(g.d_weight);
    d_bias_ = std::move(g.d_bias);
    d_factors_ = std::move(g.d_factors);
    return std::move(g.d_x);
  }

  std::vector<ParamRef<T>> params() override {
    return {{&params_.weight, &d_weight_, "weight", true, true},
            {&params_.bias, &d_bias_, "bias", true, true},
            {&params_.factors, &d_factors_, "factors", decay_factors_, true}};
  }

  void resample_mask(Rng& rng) override {
    train_mask_ = sample_mask(params_.k, p_, rng);
    if (inverted_) train_mask_.train_gain = T(1) / p_;
  }

  bool is_fb() const override { return true; }

  std::string describe() const override {
    std::ostringstream os;
    os << "fb-dense " << params_.n << "->" << params_.c << " k=" << params_.k
       << " p=" << static_cast<double>(p_);
    if (inverted_) os << " inverted";
    return os.str();
  }

  Shape output_shape(const Shape&) const override { return {params_.c}; }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FbDense>(*this); }

  /// Enforce the tanh-preactivation contract: inputs in [-1, 1] and factor
  /// projections within their L1 bound. Enabled on presets that place a
  /// squashing activation before the layer.
  void set_bounded_input_check(bool on) { bounded_input_check_ = on; }

  FbLayerParams<T>& fb_params() { return params_; }
  T retain_probability() const { return p_; }

 private:
  DropFactorMask<T> eval_mask() const {
    return inference_mask<T>(params_.k, inverted_ ? T(1) : p_);
  }

  void check_bounded(const Tensor<T>& x) const {
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (std::abs(x[i]) > T(1) + T(1e-9)) {
        throw contract_error("fb-dense expects inputs in [-1,1] (tanh preactivation), got " +
                             std::to_string(static_cast<double>(x[i])));
      }
    }
  }

  void check_projection_bound() const {
    // |f_t . x| <= sum_i |f_{t,i}| when |x_i| <= 1
    const std::size_t batch = cache_.proj.numel() ? cache_.proj.extent(0) : 0;
    for (std::size_t j = 0; j < params_.c; ++j) {
      for (std::size_t t = 0; t < params_.k; ++t) {
        T l1 = 0;
        const T* f = params_.factor_row(j, t);
        for (std::size_t i = 0; i < params_.n; ++i) l1 += std::abs(f[i]);
        for (std::size_t s = 0; s < batch; ++s) {
          if (std::abs(cache_.proj(s, j, t)) > l1 + T(1e-9)) {
            throw contract_error("factor projection exceeded its L1 bound");
          }
        }
      }
    }
  }

  FbLayerParams<T> params_;
  T p_;
  bool inverted_;
  bool decay_factors_;
  bool bounded_input_check_ = false;
  DropFactorMask<T> train_mask_, used_mask_;
  FbForwardCache<T> cache_;
  Tensor<T> d_weight_{Shape{0}}, d_bias_{Shape{0}}, d_factors_{Shape{0}};
};

// ---------------------------------------------------------------------------
// Convolutions

/// Plain convolution via im2col + dense matrix multiply.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(ConvGeometry g, Rng& rng) : g_(g) {
    auto init = init_fb_params<T>(g.out_channels, g.patch_len(), 0, rng);
    weight_ = std::move(init.weight);
    bias_ = std::move(init.bias);
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    const std::size_t batch = x.extent(0);
    g_.validate(x.extent(1), x.extent(2), x.extent(3));
    h_ = x.extent(2);
    w_ = x.extent(3);
    ho_ = g_.out_h(h_);
    wo_ = g_.out_w(w_);
    batch_ = batch;
    patches_ = fbk::detail::batch_patches(x, g_);  // [(N*S) x n]
    Tensor<T> y_rows = matmul(patches_, weight_.transposed());
    const std::size_t s_count = ho_ * wo_, c = g_.out_channels;
    Tensor<T> y({batch, c, ho_, wo_});
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t p = 0; p < s_count; ++p)
        for (std::size_t j = 0; j < c; ++j)
          y.data()[(s * c + j) * s_count + p] = y_rows(s * s_count + p, j) + bias_[j];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& d_out) override {
    const std::size_t s_count = ho_ * wo_, c = g_.out_channels, n = g_.patch_len();
    Tensor<T> d_rows({batch_ * s_count, c});
    for (std::size_t s = 0; s < batch_; ++s)
      for (std::size_t p = 0; p < s_count; ++p)
        for (std::size_t j = 0; j < c; ++j)
          d_rows(s * s_count + p, j) = d_out.data()[(s * c + j) * s_count + p];

    d_weight_ = matmul(d_rows.transposed(), patches_);
    d_bias_ = Tensor<T>({c});
    for (std::size_t r = 0; r < d_rows.extent(0); ++r)
      for (std::size_t j = 0; j < c; ++j) d_bias_[j] += d_rows(r, j);

    Tensor<T> d_patches = matmul(d_rows, weight_);
    Tensor<T> d_x({batch_, g_.in_channels, h_, w_});
    for (std::size_t s = 0; s < batch_; ++s) {
      Tensor<T> cols({n, s_count});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < s_count; ++p) cols(i, p) = d_patches(s * s_count + p, i);
      Tensor<T> dxs = col2im(cols, g_, h_, w_);
      std::copy(dxs.data(), dxs.data() + dxs.numel(), d_x.data() + s * dxs.numel());
    }
    return d_x;
  }

  std::vector<ParamRef<T>> params() override {
    return {{&weight_, &d_weight_, "weight", true, false},
            {&bias_, &d_bias_, "bias", true, false}};
  }

  std::string describe() const override {
    std::ostringstream os;
    os << "conv " << g_.kernel_h << "x" << g_.kernel_w << " " << g_.in_channels << "->"
       << g_.out_channels << " stride" << g_.stride << " pad" << g_.pad;
    return os.str();
  }

  Shape output_shape(const Shape& in) const override {
    return {g_.out_channels, g_.out_h(in[1]), g_.out_w(in[2])};
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  ConvGeometry g_;
  Tensor<T> weight_, bias_;
  Tensor<T> d_weight_{Shape{0}}, d_bias_{Shape{0}};
  Tensor<T> patches_{Shape{0}};
  std::size_t batch_ = 0, h_ = 0, w_ = 0, ho_ = 0, wo_ = 0;
};

/// Factorized bilinear convolution layer with DropFactor.
template <typename T>
class FbConv : public Layer<T> {
 public:
  FbConv(ConvGeometry g, std::size_t k, T p, Rng& rng, T sigma_f = T(-1),
         bool inverted = false, bool decay_factors = true)
      : layer_(init_fb_conv<T>(g, k, p, rng, sigma_f)),
        inverted_(inverted),
        decay_factors_(decay_factors) {
    check_retain_probability(p);
    train_mask_.p = p;
    train_mask_.mode = MaskMode::training;
    train_mask_.kept.assign(k, 1);
    train_mask_.train_gain = inverted_ ? T(1) / p : T(1);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    if (bounded_input_check_) {
      for (std::size_t i = 0; i < x.numel(); ++i) {
        if (std::abs(x[i]) > T(1) + T(1e-9)) {
          throw contract_error("fb-conv expects inputs in [-1,1] (tanh preactivation)");
        }
      }
    }
    used_mask_ = training ? train_mask_ : eval_mask();
    return fb_conv_forward(x, layer_, used_mask_, &cache_, nullptr);
  }

  Tensor<T> backward(const Tensor<T>& d_out) override {
    Tensor<T> d_x;
    auto g = fb_conv_backward(d_out, cache_, layer_, used_mask_, &d_x);
    d_weight_ = std::move(g.d_weight);
    d_bias_ = std::move(g.d_bias);
    d_factors_ = std::move(g.d_factors);
    return d_x;
  }

  std::vector<ParamRef<T>> params() override {
    return {{&layer_.params.weight, &d_weight_, "weight", true, true},
            {&layer_.params.bias, &d_bias_, "bias", true, true},
            {&layer_.params.factors, &d_factors_, "factors", decay_factors_, true}};
  }

  void resample_mask(Rng& rng) override {
    train_mask_ = sample_mask(layer_.params.k, layer_.p, rng);
    if (inverted_) train_mask_.train_gain = T(1) / layer_.p;
  }

  bool is_fb() const override { return true; }

  std::string describe() const override {
    std::ostringstream os;
    const auto& g = layer_.geometry;
    os << "fb-conv " << g.kernel_h << "x" << g.kernel_w << " " << g.in_channels << "->"
       << g.out_channels << " k=" << layer_.params.k << " p="
       << static_cast<double>(layer_.p) << " pad" << g.pad;
    return os.str();
  }

  Shape output_shape(const Shape& in) const override {
    const auto& g = layer_.geometry;
    return {g.out_channels, g.out_h(in[1]), g.out_w(in[2])};
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FbConv>(*this); }

  void set_bounded_input_check(bool on) { bounded_input_check_ = on; }
  FbConvLayer<T>& conv() { return layer_; }

 private:
  DropFactorMask<T> eval_mask() const {
    return inference_mask<T>(layer_.params.k, inverted_ ? T(1) : layer_.p);
  }

  FbConvLayer<T> layer_;
  bool inverted_;
  bool decay_factors_;
  bool bounded_input_check_ = false;
  DropFactorMask<T> train_mask_, used_mask_;
  FbConvCache<T> cache_;
  Tensor<T> d_weight_{Shape{0}}, d_bias_{Shape{0}}, d_factors_{Shape{0}};
};

// ---------------------------------------------------------------------------
// Activations and regularizers

template <typename T>
class ReLU : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    mask_ = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const bool pos = x[i] > T(0);
      mask_[i] = pos ? T(1) : T(0);
      y[i] = pos ? x[i] : T(0);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& d_out) override {
    Tensor<T> d(d_out.shape());
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = d_out[i] * mask_[i];
    return d;
  }
  std::string describe() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  Tensor<T> mask_{Shape{0}};
};

template <typename T>
class Tanh : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    out_ = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out_[i] = std::tanh(x[i]);
    return out_;
  }
  Tensor<T> backward(const Tensor<T>& d_out) override {
    Tensor<T> d(d_out.shape());
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = d_out[i] * (T(1) - out_[i] * out_[i]);
    return d;
  }
  std::string describe() const override { return "tanh"; }
  Shape output_shape(const Shape& in) const override { return in; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Tanh>(*this); }

 private:
  Tensor<T> out_{Shape{0}};
};

/// Unit dropout with the same train/test convention as DropFactor: units are
/// kept with probability p in training and activations are scaled by p at
/// inference.
template <typename T>
class Dropout : public Layer<T> {
 public:
  explicit Dropout(T keep_p) : keep_(keep_p) { check_retain_probability(keep_p); }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    training_ = training;
    if (!training) {
      Tensor<T> y(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) y[i] = keep_ * x[i];
      return y;
    }
    Rng rng(seed_);
    mask_ = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      mask_[i] = rng.bernoulli(static_cast<double>(keep_)) ? T(1) : T(0);
      y[i] = mask_[i] * x[i];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& d_out) override {
    Tensor<T> d(d_out.shape());
    if (!training_) {
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] = keep_ * d_out[i];
      return d;
    }
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = mask_[i] * d_out[i];
    return d;
  }

  void resample_mask(Rng& rng) override { seed_ = rng.bits(); }

  std::string describe() const override {
    return "dropout p=" + std::to_string(static_cast<double>(keep_));
  }
  Shape output_shape(const Shape& in) const override { return in; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }

 private:
  T keep_;
  std::uint64_t seed_ = 0;
  bool training_ = false;
  Tensor<T> mask_{Shape{0}};
};

// ---------------------------------------------------------------------------
// Normalization

/// Batch normalization with running-average statistics (momentum 0.9) and
/// per-channel affine parameters. Works on [N, D] feature matrices and
/// [N, C, H, W] feature maps; statistics are per feature / per channel.
template <typename T>
class BatchNorm : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t channels, T momentum = T(0.9), T eps = T(1e-5))
      : channels_(channels), momentum_(momentum), eps_(eps) {
    gamma_ = Tensor<T>::full({channels}, T(1));
    beta_ = Tensor<T>({channels});
    running_mean_ = Tensor<T>({channels});
    running_var_ = Tensor<T>::full({channels}, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    const std::size_t count = plan(x);
    training_ = training;
    xhat_ = Tensor<T>(x.shape());
    inv_std_ = Tensor<T>({channels_});
    Tensor<T> y(x.shape());

    for (std::size_t ch = 0; ch < channels_; ++ch) {
      T mean, var;
      if (training) {
        mean = 0;
        for_channel(x, ch, [&](T v) { mean += v; });
        mean /= static_cast<T>(count);
        var = 0;
        for_channel(x, ch, [&](T v) { var += (v - mean) * (v - mean); });
        var /= static_cast<T>(count);
        running_mean_[ch] = momentum_ * running_mean_[ch] + (T(1) - momentum_) * mean;
        running_var_[ch] = momentum_ * running_var_[ch] + (T(1) - momentum_) * var;
      } else {
        mean = running_mean_[ch];
        var = running_var_[ch];
      }
      const T inv = T(1) / std::sqrt(var + eps_);
      inv_std_[ch] = inv;
      transform_channel(x, xhat_, y, ch, mean, inv);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& d_out) override {
    const std::size_t count = plan(d_out);
    d_gamma_ = Tensor<T>({channels_});
    d_beta_ = Tensor<T>({channels_});
    Tensor<T> d_x(d_out.shape());
    const T m = static_cast<T>(count);

    for (std::size_t ch = 0; ch < channels_; ++ch) {
      T sum_d = 0, sum_dx = 0;
      zip_channel(d_out, xhat_, ch, [&](T d, T xh) {
        sum_d += d;
        sum_dx += d * xh;
      });
      d_gamma_[ch] += sum_dx;
      d_beta_[ch] += sum_d;
      const T scale = gamma_[ch] * inv_std_[ch];
      if (training_) {
        write_channel(d_out, d_x, ch, [&](T d, T xh) {
          return scale * (d - sum_d / m - xh * sum_dx / m);
        });
      } else {
        write_channel(d_out, d_x, ch, [&](T d, T) { return scale * d; });
      }
    }
    return d_x;
  }

  std::vector<ParamRef<T>> params() override {
    // affine parameters sit outside weight decay unless opted in
    return {{&gamma_, &d_gamma_, "gamma", decay_affine_, false},
            {&beta_, &d_beta_, "beta", decay_affine_, false}};
  }

  std::vector<std::pair<std::string, Tensor<T>*>> extra_state() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

  std::string describe() const override { return "bn " + std::to_string(channels_); }
  Shape output_shape(const Shape& in) const override { return in; }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<BatchNorm>(*this);
  }

  void set_weight_decay(bool on) { decay_affine_ = on; }

 private:
  /// Elements per channel across the normalization axes.
  std::size_t plan(const Tensor<T>& x) const {
    if (x.rank() != 2 && x.rank() != 4)
      throw dimension_error("bn handles rank 2 or 4 inputs, got " + shape_str(x.shape()));
    if (x.extent(1) != channels_)
      throw dimension_error("bn: input " + shape_str(x.shape()) + " vs channels " +
                            std::to_string(channels_));
    return x.rank() == 2 ? x.extent(0) : x.extent(0) * x.extent(2) * x.extent(3);
  }

  template <typename Fn>
  void for_channel(const Tensor<T>& x, std::size_t ch, Fn&& fn) const {
    if (x.rank() == 2) {
      for (std::size_t s = 0; s < x.extent(0); ++s) fn(x(s, ch));
    } else {
      const std::size_t hw = x.extent(2) * x.extent(3);
      for (std::size_t s = 0; s < x.extent(0); ++s) {
        const T* base = x.data() + (s * channels_ + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) fn(base[i]);
      }
    }
  }

  void transform_channel(const Tensor<T>& x, Tensor<T>& xhat, Tensor<T>& y, std::size_t ch,
                         T mean, T inv) {
    const T g = gamma_[ch], b = beta_[ch];
    if (x.rank() == 2) {
      for (std::size_t s = 0; s < x.extent(0); ++s) {
        const T xh = (x(s, ch) - mean) * inv;
        xhat(s, ch) = xh;
        y(s, ch) = g * xh + b;
      }
    } else {
      const std::size_t hw = x.extent(2) * x.extent(3);
      for (std::size_t s = 0; s < x.extent(0); ++s) {
        const std::size_t off = (s * channels_ + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const T xh = (x[off + i] - mean) * inv;
          xhat[off + i] = xh;
          y[off + i] = g * xh + b;
        }
      }
    }
  }

  template <typename Fn>
  void zip_channel(const Tensor<T>& a, const Tensor<T>& b, std::size_t ch, Fn&& fn) const {
    if (a.rank() == 2) {
      for (std::size_t s = 0; s < a.extent(0); ++s) fn(a(s, ch), b(s, ch));
    } else {
      const std::size_t hw = a.extent(2) * a.extent(3);
      for (std::size_t s = 0; s < a.extent(0); ++s) {
        const std::size_t off = (s * channels_ + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) fn(a[off + i], b[off + i]);
      }
    }
  }

  template <typename Fn>
  void write_channel(const Tensor<T>& d, Tensor<T>& out, std::size_t ch, Fn&& fn) const {
    if (d.rank() == 2) {
      for (std::size_t s = 0; s < d.extent(0); ++s) out(s, ch) = fn(d(s, ch), xhat_(s, ch));
    } else {
      const std::size_t hw = d.extent(2) * d.extent(3);
      for (std::size_t s = 0; s < d.extent(0); ++s) {
        const std::size_t off = (s * channels_ + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) out[off + i] = fn(d[off + i], xhat_[off + i]);
      }
    }
  }

  std::size_t channels_;
  T momentum_, eps_;
  bool decay_affine_ = false;
  bool training_ = false;
  Tensor<T> gamma_{Shape{0}}, beta_{Shape{0}};
  Tensor<T> running_mean_{Shape{0}}, running_var_{Shape{0}};
  Tensor<T> d_gamma_{Shape{0}}, d_beta_{Shape{0}};
  Tensor<T> xhat_{Shape{0}}, inv_std_{Shape{0}};
};

// ---------------------------------------------------------------------------
// Pooling and reshaping

template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  explicit MaxPool2d(std::size_t size = 2) : size_(size) {}

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    in_shape_ = x.shape();
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t ho = h / size_, wo = w / size_;
    Tensor<T> y({n, c, ho, wo});
    argmax_.assign(y.numel(), 0);
    std::size_t out_idx = 0;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            T best = x(s, ch, oy * size_, ox * size_);
            std::size_t best_flat =
                ((s * c + ch) * h + oy * size_) * w + ox * size_;
            for (std::size_t ky = 0; ky < size_; ++ky)
              for (std::size_t kx = 0; kx < size_; ++kx) {
                const T v = x(s, ch, oy * size_ + ky, ox * size_ + kx);
                if (v > best) {
                  best = v;
                  best_flat = ((s * c + ch) * h + oy * size_ + ky) * w + ox * size_ + kx;
                }
              }
            y[out_idx] = best;
            argmax_[out_idx++] = best_flat;
          }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& d_out) override {
    Tensor<T> d_x(in_shape_);
    for (std::size_t i = 0; i < d_out.numel(); ++i) d_x[argmax_[i]] += d_out[i];
    return d_x;
  }

  std::string describe() const override {
    return "maxpool " + std::to_string(size_) + "x" + std::to_string(size_);
  }
  Shape output_shape(const Shape& in) const override {
    return {in[0], in[1] / size_, in[2] / size_};
  }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<MaxPool2d>(*this);
  }

 private:
  std::size_t size_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class AvgPool2d : public Layer<T> {
 public:
  explicit AvgPool2d(std::size_t size = 2) : size_(size) {}

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    in_shape_ = x.shape();
    const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const std::size_t ho = h / size_, wo = w / size_;
    const T norm = T(1) / static_cast<T>(size_ * size_);
    Tensor<T> y({n, c, ho, wo});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            T acc = 0;
            for (std::size_t ky = 0; ky < size_; ++ky)
              for (std::size_t kx = 0; kx < size_; ++kx)
                acc += x(s, ch, oy * size_ + ky, ox * size_ + kx);
            y(s, ch, oy, ox) = acc * norm;
          }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& d_out) override {
    const std::size_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    const T norm = T(1) / static_cast<T>(size_ * size_);
    Tensor<T> d_x(in_shape_);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < h / size_; ++oy)
          for (std::size_t ox = 0; ox < w / size_; ++ox)
            for (std::size_t ky = 0; ky < size_; ++ky)
              for (std::size_t kx = 0; kx < size_; ++kx)
                d_x(s, ch, oy * size_ + ky, ox * size_ + kx) =
                    d_out(s, ch, oy, ox) * norm;
    return d_x;
  }

  std::string describe() const override {
    return "avgpool " + std::to_string(size_) + "x" + std::to_string(size_);
  }
  Shape output_shape(const Shape& in) const override {
    return {in[0], in[1] / size_, in[2] / size_};
  }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<AvgPool2d>(*this);
  }

 private:
  std::size_t size_;
  Shape in_shape_;
};

/// Averages each channel over all spatial positions: [N,C,H,W] -> [N,C].
template <typename T>
class GlobalAvgPool : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    in_shape_ = x.shape();
    const std::size_t n = x.extent(0), c = x.extent(1), hw = x.extent(2) * x.extent(3);
    Tensor<T> y({n, c});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* base = x.data() + (s * c + ch) * hw;
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += base[i];
        y(s, ch) = acc / static_cast<T>(hw);
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& d_out) override {
    const std::size_t n = in_shape_[0], c = in_shape_[1], hw = in_shape_[2] * in_shape_[3];
    Tensor<T> d_x(in_shape_);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T v = d_out(s, ch) / static_cast<T>(hw);
        T* base = d_x.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) base[i] = v;
      }
    return d_x;
  }

  std::string describe() const override { return "global-avgpool"; }
  Shape output_shape(const Shape& in) const override { return {in[0]}; }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<GlobalAvgPool>(*this);
  }

 private:
  Shape in_shape_;
};

template <typename T>
class Flatten : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    in_shape_ = x.shape();
    return x.reshape({x.extent(0), x.numel() / x.extent(0)});
  }
  Tensor<T> backward(const Tensor<T>& d_out) override { return d_out.reshape(in_shape_); }
  std::string describe() const override { return "flatten"; }
  Shape output_shape(const Shape& in) const override {
    std::size_t prod = 1;
    for (std::size_t e : in) prod *= e;
    return {prod};
  }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<Flatten>(*this);
  }

 private:
  Shape in_shape_;
};

}  // namespace fbk::nn
