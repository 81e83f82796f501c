#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fbk/errors.hpp"
#include "fbk/mac_counter.hpp"
#include "fbk/rng.hpp"
#include "fbk/tensor.hpp"

namespace fbk {

enum class MaskMode { training, inference };

/// DropFactor state for one layer. In training mode each factor is kept or
/// dropped by an independent Bernoulli(p) draw shared across all output
/// units, batch samples and spatial positions; the mask is resampled once per
/// mini-batch iteration. In inference mode the draws are unused and every
/// factor term is scaled by p instead, which matches the expected output over
/// all 2^k thinned networks.
template <typename T>
struct DropFactorMask {
  T p = 1;
  MaskMode mode = MaskMode::inference;
  std::vector<std::uint8_t> kept;  // length k; used in training mode only

  /// Multiplier applied to kept factors in training mode. 1 for the standard
  /// scheme (scale by p at inference); 1/p realizes the inverted variant
  /// where inference leaves the quadratic term unscaled.
  T train_gain = 1;

  std::size_t factor_count() const { return kept.size(); }

  /// Per-factor multiplier applied to the quadratic term.
  T gate(std::size_t t) const {
    return mode == MaskMode::training ? train_gain * static_cast<T>(kept[t]) : p;
  }

  bool operator==(const DropFactorMask& o) const {
    return p == o.p && mode == o.mode && kept == o.kept && train_gain == o.train_gain;
  }
};

template <typename T>
void check_retain_probability(T p) {
  if (!(p > T(0)) || p > T(1)) {
    throw config_error("DropFactor retain probability must lie in (0,1], got " +
                       std::to_string(static_cast<double>(p)));
  }
}

/// Draws a training-mode mask of k independent Bernoulli(p) factors.
template <typename T>
DropFactorMask<T> sample_mask(std::size_t k, T p, Rng& rng) {
  check_retain_probability(p);
  DropFactorMask<T> m;
  m.p = p;
  m.mode = MaskMode::training;
  m.kept.resize(k);
  for (std::size_t t = 0; t < k; ++t) m.kept[t] = rng.bernoulli(static_cast<double>(p)) ? 1 : 0;
  return m;
}

template <typename T>
DropFactorMask<T> inference_mask(std::size_t k, T p) {
  check_retain_probability(p);
  DropFactorMask<T> m;
  m.p = p;
  m.mode = MaskMode::inference;
  m.kept.assign(k, 1);
  return m;
}

/// Parameters of one factorized bilinear layer with c output units on an
/// n-dimensional input:
///
///   y_j = b_j + w_j . x + sum_t g_t (f_{j,t} . x)^2
///
/// where f_{j,t} is row t of the k x n factor matrix of unit j and g_t is the
/// DropFactor gate. The k x n factorization keeps the quadratic interaction
/// weight at rank <= k without ever materializing an n x n matrix. k = 0 is
/// legal and collapses the layer to a plain linear transform.
template <typename T>
struct FbLayerParams {
  std::size_t c = 0;  // output units
  std::size_t n = 0;  // input dimension
  std::size_t k = 0;  // factors per unit

  Tensor<T> bias;     // [c]
  Tensor<T> weight;   // [c x n]
  Tensor<T> factors;  // [c x k x n]

  const T* factor_row(std::size_t j, std::size_t t) const {
    return factors.data() + (j * k + t) * n;
  }
  T* factor_row(std::size_t j, std::size_t t) {
    return factors.data() + (j * k + t) * n;
  }
};

/// Fan-in uniform init for w and b; zero-mean Gaussian with configurable
/// standard deviation for the factors. The default sigma_f = sqrt(1/(k*n))
/// puts the quadratic term on the same scale as the linear term at init.
/// Draw order is fixed (weight, bias, factors) so layers that share a prefix
/// of the parameter list consume identical random streams.
template <typename T>
FbLayerParams<T> init_fb_params(std::size_t c, std::size_t n, std::size_t k, Rng& rng,
                                T sigma_f = T(-1)) {
  FbLayerParams<T> p;
  p.c = c;
  p.n = n;
  p.k = k;
  p.weight = Tensor<T>({c, n});
  p.bias = Tensor<T>({c});
  p.factors = Tensor<T>({c, k, n});
  const T bound = T(1) / std::sqrt(static_cast<T>(n));
  for (std::size_t i = 0; i < p.weight.numel(); ++i)
    p.weight[i] = static_cast<T>(rng.uniform(-bound, bound));
  for (std::size_t i = 0; i < p.bias.numel(); ++i)
    p.bias[i] = static_cast<T>(rng.uniform(-bound, bound));
  if (k > 0) {
    const T sf = sigma_f > T(0) ? sigma_f : T(1) / std::sqrt(static_cast<T>(k * n));
    for (std::size_t i = 0; i < p.factors.numel(); ++i)
      p.factors[i] = sf * static_cast<T>(rng.gaussian());
  }
  return p;
}

/// Forward state retained for the backward pass: the input batch and the
/// per-unit factor projections F_j x_s, plus a snapshot of the mask the
/// forward ran under.
template <typename T>
struct FbForwardCache {
  Tensor<T> x;     // [batch x n]
  Tensor<T> proj;  // [batch x c x k]
  DropFactorMask<T> mask;
};

/// Gradients mirroring FbLayerParams plus the input gradient. Parameter
/// gradients are summed (not averaged) over the batch.
template <typename T>
struct FbGradients {
  Tensor<T> d_bias;     // [c]
  Tensor<T> d_weight;   // [c x n]
  Tensor<T> d_factors;  // [c x k x n]
  Tensor<T> d_x;        // [batch x n]
};

namespace detail {

/// Gated bilinear contraction a^T F^T diag(g) F b, evaluated in the O(kn)
/// order: form the left projection F a and the right projection F b, then
/// contract them through the per-factor gates. The left projection is written
/// to proj_out when requested (the backward pass consumes it). Costs 2kn
/// multiply-accumulates for the projections plus k for the contraction.
template <typename T>
T gated_quadratic(const FbLayerParams<T>& params, std::size_t j, const T* a, const T* b,
                  const DropFactorMask<T>& mask, T* proj_out, MacCounter* macs) {
  const std::size_t k = params.k, n = params.n;
  T acc = 0;
  for (std::size_t t = 0; t < k; ++t) {
    const T* f = params.factor_row(j, t);
    const T left = dot(f, a, n);
    const T right = dot(f, b, n);
    acc += mask.gate(t) * (left * right);
    if (proj_out) proj_out[t] = left;
  }
  if (macs) macs->quad += static_cast<std::uint64_t>(k) * (2 * n) + k;
  return acc;
}

}  // namespace detail

/// Factorized bilinear forward over a batch:
///   y[s][j] = b_j + w_j . x_s + sum_t g_t (f_{j,t} . x_s)^2.
/// The quadratic term goes through the rank-k projections only; no n x n
/// interaction matrix is ever formed. Pass a cache to enable fb_backward and
/// a counter to collect multiply-accumulate counts.
template <typename T>
Tensor<T> fb_forward(const Tensor<T>& x, const FbLayerParams<T>& params,
                     const DropFactorMask<T>& mask, FbForwardCache<T>* cache = nullptr,
                     MacCounter* macs = nullptr) {
  if (x.rank() != 2 || x.extent(1) != params.n) {
    throw dimension_error("fb_forward: input " + shape_str(x.shape()) +
                          " does not match layer input dimension [" +
                          std::to_string(params.n) + "]");
  }
  if (mask.factor_count() != params.k) {
    throw dimension_error("fb_forward: mask has " + std::to_string(mask.factor_count()) +
                          " factors, layer has " + std::to_string(params.k));
  }
  const std::size_t batch = x.extent(0), c = params.c, n = params.n, k = params.k;

  Tensor<T> y({batch, c});
  if (cache) {
    cache->x = x;
    cache->proj = Tensor<T>({batch, c, k});
    cache->mask = mask;
  }
  for (std::size_t s = 0; s < batch; ++s) {
    const T* xs = x.row(s);
    for (std::size_t j = 0; j < c; ++j) {
      T acc = params.bias[j] + dot(params.weight.row(j), xs, n);
      if (macs) macs->linear += n;
      T* proj = cache ? cache->proj.data() + (s * c + j) * k : nullptr;
      acc += detail::gated_quadratic(params, j, xs, xs, mask, proj, macs);
      y(s, j) = acc;
    }
  }
  return y;
}

/// Counting-only overload: forward without retaining backward state.
template <typename T>
Tensor<T> fb_forward(const Tensor<T>& x, const FbLayerParams<T>& params,
                     const DropFactorMask<T>& mask, MacCounter* macs) {
  return fb_forward<T>(x, params, mask, nullptr, macs);
}

/// Analytic gradients of the factorized bilinear layer. For unit j and
/// upstream gradient d = d_y[s][j]:
///   d_b_j      = sum_s d
///   d_w_j      = sum_s d * x_s
///   d_f_{j,t}  = sum_s 2 g_t d (f_{j,t} . x_s) x_s
///   d_x_s     += d * (w_j + 2 sum_t g_t (f_{j,t} . x_s) f_{j,t})
/// Dropped factors (g_t = 0) contribute zero gradient. Total cost is
/// O(batch * c * k * n).
template <typename T>
FbGradients<T> fb_backward(const Tensor<T>& d_y, const FbForwardCache<T>& cache,
                           const FbLayerParams<T>& params, const DropFactorMask<T>& mask) {
  if (!(mask == cache.mask)) {
    throw contract_error("fb_backward: mask does not match the one used in fb_forward");
  }
  const std::size_t batch = cache.x.extent(0), c = params.c, n = params.n, k = params.k;
  if (d_y.rank() != 2 || d_y.extent(0) != batch || d_y.extent(1) != c) {
    throw dimension_error("fb_backward: upstream gradient " + shape_str(d_y.shape()) +
                          " does not match outputs [" + std::to_string(batch) + "x" +
                          std::to_string(c) + "]");
  }

  FbGradients<T> g;
  g.d_bias = Tensor<T>({c});
  g.d_weight = Tensor<T>({c, n});
  g.d_factors = Tensor<T>({c, k, n});
  g.d_x = Tensor<T>({batch, n});

  for (std::size_t s = 0; s < batch; ++s) {
    const T* xs = cache.x.row(s);
    T* dxs = g.d_x.row(s);
    for (std::size_t j = 0; j < c; ++j) {
      const T d = d_y(s, j);
      g.d_bias[j] += d;
      if (d == T(0)) continue;
      T* dw = g.d_weight.row(j);
      const T* w = params.weight.row(j);
      for (std::size_t i = 0; i < n; ++i) {
        dw[i] += d * xs[i];
        dxs[i] += d * w[i];
      }
      const T* proj = cache.proj.data() + (s * c + j) * k;
      for (std::size_t t = 0; t < k; ++t) {
        const T coef = T(2) * mask.gate(t) * d * proj[t];
        if (coef == T(0)) continue;
        const T* f = params.factor_row(j, t);
        T* df = g.d_factors.data() + (j * k + t) * n;
        for (std::size_t i = 0; i < n; ++i) {
          df[i] += coef * xs[i];
          dxs[i] += coef * f[i];
        }
      }
    }
  }
  return g;
}

/// Parameter counts for one layer, quadratic and linear parts reported
/// separately: the factorized quadratic part costs c*k*n parameters, the
/// linear part c*n + c.
struct ParamCount {
  std::uint64_t linear = 0;
  std::uint64_t quadratic = 0;
  std::uint64_t total() const { return linear + quadratic; }
};

inline ParamCount param_count(std::uint64_t c, std::uint64_t n, std::uint64_t k) {
  return ParamCount{c * n + c, c * k * n};
}

}  // namespace fbk
