#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "fbk/errors.hpp"
#include "fbk/fb_layer.hpp"
#include "fbk/mac_counter.hpp"
#include "fbk/rng.hpp"
#include "fbk/tensor.hpp"

// Brute-force reference implementations the fast kernels are tested against.
// Everything here is written with its own explicit loops; none of it shares
// quadratic-form code with fb_forward / fb_conv_forward, so a bug in the
// kernels cannot hide in a shared helper.

namespace fbk::oracles {

/// Sum of outer products z = sum_i x_i x_i^T over a set of feature vectors.
/// z is symmetric positive semi-definite by construction.
template <typename T>
struct GlobalDescriptor {
  Tensor<T> z;  // [n x n]
};

template <typename T>
GlobalDescriptor<T> bilinear_pool(const Tensor<T>& features) {
  if (features.rank() != 2 || features.extent(0) == 0) {
    throw data_error("bilinear_pool: need at least one feature vector, got " +
                     shape_str(features.shape()));
  }
  const std::size_t s_count = features.extent(0), n = features.extent(1);
  GlobalDescriptor<T> d{Tensor<T>({n, n})};
  for (std::size_t s = 0; s < s_count; ++s) {
    const T* x = features.row(s);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d.z(i, j) += x[i] * x[j];
  }
  return d;
}

/// Classifier over the pooled descriptor: weight row j acts on vec(z), or
/// equivalently as the n x n quadratic form reshaped from that row.
template <typename T>
struct BilinearPoolingModel {
  Tensor<T> weight;  // [c x n*n]
  Tensor<T> bias;    // [c]
  std::size_t n = 0;

  /// Row j reshaped to its n x n quadratic-form matrix (row-major, exact).
  Tensor<T> reshaped(std::size_t j) const {
    Tensor<T> m({n, n});
    const T* w = weight.row(j);
    std::copy(w, w + n * n, m.data());
    return m;
  }
};

template <typename T>
struct BilinearClassifyResult {
  Tensor<T> scores;                 // via W vec(z)
  Tensor<T> scores_quadratic_form;  // via per-location quadratic forms
  T max_abs_diff = 0;
};

/// Evaluates the bilinear-pooling classifier along both algebraic routes:
/// once as b + W vec(sum_i x_i x_i^T) and once as
/// b_j + sum_i x_i^T W_j^R x_i. The two must agree to rounding; callers
/// assert on max_abs_diff.
template <typename T>
BilinearClassifyResult<T> bilinear_classify(const Tensor<T>& features,
                                            const BilinearPoolingModel<T>& model) {
  const std::size_t n = model.n;
  if (features.rank() != 2 || features.extent(1) != n ||
      model.weight.extent(1) != n * n) {
    throw dimension_error("bilinear_classify: features " + shape_str(features.shape()) +
                          " vs model n=" + std::to_string(n));
  }
  const std::size_t c = model.weight.extent(0), s_count = features.extent(0);

  BilinearClassifyResult<T> r;
  r.scores = Tensor<T>({c});
  r.scores_quadratic_form = Tensor<T>({c});

  GlobalDescriptor<T> d = bilinear_pool(features);
  for (std::size_t j = 0; j < c; ++j) {
    T acc = model.bias[j];
    const T* w = model.weight.row(j);
    for (std::size_t i = 0; i < n * n; ++i) acc += w[i] * d.z[i];
    r.scores[j] = acc;
  }

  for (std::size_t j = 0; j < c; ++j) {
    T acc = model.bias[j];
    const T* w = model.weight.row(j);
    for (std::size_t s = 0; s < s_count; ++s) {
      const T* x = features.row(s);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) acc += x[a] * w[a * n + b] * x[b];
    }
    r.scores_quadratic_form[j] = acc;
  }

  for (std::size_t j = 0; j < c; ++j)
    r.max_abs_diff = std::max(r.max_abs_diff,
                              std::abs(r.scores[j] - r.scores_quadratic_form[j]));
  return r;
}

/// Literal O(kn^2) expansion of the factorized bilinear transform on one
/// input vector: the double sum over feature pairs weighted by column inner
/// products of F, with the quadratic part scaled by p (inference behavior).
template <typename T>
Tensor<T> naive_fb(const Tensor<T>& x, const FbLayerParams<T>& params, T p,
                   MacCounter* macs = nullptr) {
  if (x.rank() != 1 || x.extent(0) != params.n) {
    throw dimension_error("naive_fb: input " + shape_str(x.shape()) + " vs n=" +
                          std::to_string(params.n));
  }
  const std::size_t n = params.n, k = params.k, c = params.c;
  Tensor<T> y({c});
  for (std::size_t j = 0; j < c; ++j) {
    T acc = params.bias[j];
    const T* w = params.weight.row(j);
    for (std::size_t i = 0; i < n; ++i) acc += w[i] * x[i];
    if (macs) macs->linear += n;
    T quad = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < n; ++l) {
        // inner product of factor columns i and l
        T col_dot = 0;
        for (std::size_t t = 0; t < k; ++t)
          col_dot += params.factors(j, t, i) * params.factors(j, t, l);
        quad += col_dot * x[i] * x[l];
      }
    }
    if (macs) macs->quad += static_cast<std::uint64_t>(n) * n * (k + 1);
    y[j] = acc + p * quad;
  }
  return y;
}

/// Batched wrapper over the literal expansion, used for runtime scaling
/// measurements of the O(kn^2) path.
template <typename T>
Tensor<T> naive_fb_batch(const Tensor<T>& x, const FbLayerParams<T>& params, T p,
                         MacCounter* macs = nullptr) {
  const std::size_t batch = x.extent(0), n = x.extent(1);
  Tensor<T> y({batch, params.c});
  for (std::size_t s = 0; s < batch; ++s) {
    Tensor<T> xs({n});
    std::copy(x.row(s), x.row(s) + n, xs.data());
    Tensor<T> ys = naive_fb(xs, params, p, macs);
    std::copy(ys.data(), ys.data() + params.c, y.row(s));
  }
  return y;
}

/// Central finite differences of a scalar function, coordinate by
/// coordinate. Evaluate in double precision; h around 1e-5 balances
/// truncation against rounding for unit-scale inputs.
template <typename T, typename Fn>
Tensor<T> finite_diff_grad(Fn&& fn, const Tensor<T>& point, T h) {
  Tensor<T> grad(point.shape());
  Tensor<T> probe = point;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    const T saved = probe[i];
    probe[i] = saved + h;
    const T up = fn(static_cast<const Tensor<T>&>(probe));
    probe[i] = saved - h;
    const T down = fn(static_cast<const Tensor<T>&>(probe));
    probe[i] = saved;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

/// Factorization-machine style prediction on a sparse input: a single-unit
/// FB layer evaluated over the nonzero coordinates only. Matches fb_forward
/// on the densified vector. Note the quadratic sum includes the i = j
/// self-interaction terms, unlike classic factorization machines which
/// restrict to i < j.
template <typename T>
T fm_predict(const std::vector<std::pair<std::size_t, T>>& x_sparse,
             const FbLayerParams<T>& params, T p) {
  if (params.c != 1) {
    throw dimension_error("fm_predict expects a single output unit, got c=" +
                          std::to_string(params.c));
  }
  T acc = params.bias[0];
  const T* w = params.weight.row(0);
  for (const auto& [i, v] : x_sparse) acc += w[i] * v;
  for (std::size_t t = 0; t < params.k; ++t) {
    T s = 0;
    for (const auto& [i, v] : x_sparse) s += params.factors(0, t, i) * v;
    acc += p * s * s;
  }
  return acc;
}

/// Direct sliding-window convolution, the reference for im2col-based conv
/// paths. Weights are [c_out x C x kh x kw]; padding reads as zero.
template <typename T>
Tensor<T> direct_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                        std::size_t stride, std::size_t pad) {
  const std::size_t batch = x.extent(0), c_in = x.extent(1), h = x.extent(2), w = x.extent(3);
  const std::size_t c_out = weight.extent(0), kh = weight.extent(2), kw = weight.extent(3);
  if (weight.extent(1) != c_in) {
    throw dimension_error("direct_conv2d: weight channels " + shape_str(weight.shape()) +
                          " vs input " + shape_str(x.shape()));
  }
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  Tensor<T> y({batch, c_out, ho, wo});
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t j = 0; j < c_out; ++j)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T acc = bias.numel() ? bias[j] : T(0);
          for (std::size_t ch = 0; ch < c_in; ++ch)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                          static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix < 0 ||
                    ix >= static_cast<std::ptrdiff_t>(w))
                  continue;
                acc += x(s, ch, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       weight(j, ch, ky, kx);
              }
          y(s, j, oy, ox) = acc;
        }
  return y;
}

/// Leading eigenvalues of a symmetric PSD matrix by power iteration with
/// deflation. Good enough to bound numerical rank at test scale; avoids
/// pulling a full eigensolver into the project.
template <typename T>
std::vector<T> sym_top_eigenvalues(Tensor<T> a, std::size_t count, Rng& rng,
                                   std::size_t iters = 400) {
  const std::size_t n = a.extent(0);
  std::vector<T> eigs;
  for (std::size_t e = 0; e < count && e < n; ++e) {
    std::vector<T> v(n);
    for (auto& vi : v) vi = static_cast<T>(rng.gaussian());
    for (std::size_t it = 0; it < iters; ++it) {
      std::vector<T> av(n, T(0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) av[i] += a(i, j) * v[j];
      T norm = 0;
      for (T x : av) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == T(0)) break;
      for (std::size_t i = 0; i < n; ++i) v[i] = av[i] / norm;
    }
    // Rayleigh quotient of the converged iterate
    T lambda = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) lambda += v[i] * a(i, j) * v[j];
    eigs.push_back(lambda);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a(i, j) -= lambda * v[i] * v[j];
  }
  return eigs;
}

/// Comparison report between the FB 1x1-conv + global-average-pool pipeline
/// and the bilinear-pooling classifier constructed from the same parameters
/// (quadratic-form matrix F_j^T F_j, same bias, linear term averaged over
/// locations).
template <typename T>
struct ConstructionReport {
  std::vector<double> pipeline;  // FB conv + global average pooling
  std::vector<double> oracle;    // constructed bilinear-pooling evaluation
  double max_abs_diff = 0;
  std::size_t location_count = 0;
  std::string inputs_digest;
};

namespace detail {

template <typename T>
std::string fnv_digest(std::initializer_list<const Tensor<T>*> tensors) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 0x100000001b3ull;
    }
  };
  for (const Tensor<T>* t : tensors) {
    mix(t->numel());
    for (std::size_t i = 0; i < t->numel(); ++i) {
      double d = static_cast<double>((*t)[i]);
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(d));
      std::memcpy(&bits, &d, sizeof(bits));
      mix(bits);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace detail

/// Builds the bilinear-pooling model with W_j^R := F_j^T F_j and bias b, and
/// evaluates b_j + (1/|S|) (sum_i w_j.x_i + sum_i x_i^T W_j^R x_i) through
/// the quadratic-form route. The FB pipeline side must be supplied by the
/// caller (it is the implementation under test, not part of the oracle).
template <typename T>
ConstructionReport<T> fb_construction_oracle(const FbLayerParams<T>& params,
                                             const Tensor<T>& features,
                                             const std::vector<T>& pipeline_scores) {
  const std::size_t n = params.n, c = params.c, k = params.k;
  const std::size_t s_count = features.extent(0);
  if (features.extent(1) != n) {
    throw dimension_error("fb_construction_oracle: features " + shape_str(features.shape()) +
                          " vs n=" + std::to_string(n));
  }

  BilinearPoolingModel<T> model;
  model.n = n;
  model.bias = params.bias;
  model.weight = Tensor<T>({c, n * n});
  for (std::size_t j = 0; j < c; ++j) {
    T* w = model.weight.row(j);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        T acc = 0;
        for (std::size_t t = 0; t < k; ++t)
          acc += params.factors(j, t, a) * params.factors(j, t, b);
        w[a * n + b] = acc;
      }
  }

  ConstructionReport<T> rep;
  rep.location_count = s_count;
  rep.inputs_digest =
      detail::fnv_digest<T>({&params.weight, &params.bias, &params.factors, &features});
  rep.pipeline.assign(pipeline_scores.begin(), pipeline_scores.end());
  rep.oracle.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    T lin = 0;
    const T* wj = params.weight.row(j);
    for (std::size_t s = 0; s < s_count; ++s) {
      const T* x = features.row(s);
      for (std::size_t i = 0; i < n; ++i) lin += wj[i] * x[i];
    }
    T quad = 0;
    const T* wr = model.weight.row(j);
    for (std::size_t s = 0; s < s_count; ++s) {
      const T* x = features.row(s);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) quad += x[a] * wr[a * n + b] * x[b];
    }
    rep.oracle[j] = static_cast<double>(params.bias[j]) +
                    (static_cast<double>(lin) + static_cast<double>(quad)) /
                        static_cast<double>(s_count);
    rep.max_abs_diff = std::max(
        rep.max_abs_diff, std::abs(rep.oracle[j] - rep.pipeline[j]));
  }
  return rep;
}

}  // namespace fbk::oracles
