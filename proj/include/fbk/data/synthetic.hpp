#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fbk/data/dataset.hpp"
#include "fbk/errors.hpp"
#include "fbk/rng.hpp"
#include "fbk/tensor.hpp"

namespace fbk::data {

/// Controlled testbed for second-order capacity: labels come from argmax
/// over c scoring functions, each a linear term plus a rank-r positive
/// semi-definite quadratic form. With r = 0 the task is linearly separable;
/// with r > 0 and the linear part scaled down, only models that capture
/// pairwise feature interactions can fit it.
struct SyntheticQuadraticSpec {
  std::size_t n = 16;       // input dimension
  std::size_t r = 4;        // true rank of each class's interaction matrix
  std::size_t classes = 4;
  std::size_t train_samples = 4000;
  std::size_t test_samples = 1000;
  double noise = 0.0;            // stddev of score perturbation
  double linear_scale = 1.0;     // weight of the linear score component
  double quad_scale = 1.0;       // weight of the quadratic score component
  double margin = 0.1;           // minimum top-2 score gap (rejection sampled)
  std::uint64_t seed = 1;
};

/// Generator parameters retained for audit.
template <typename T>
struct SyntheticQuadraticData {
  Dataset<T> train, test;
  Tensor<T> linear_w;   // [c x n]
  Tensor<T> quad_f;     // [c x r x n]; class j's interaction matrix is F_j^T F_j
  Tensor<T> bias;       // [c]
};

template <typename T>
SyntheticQuadraticData<T> gen_synthetic(const SyntheticQuadraticSpec& spec) {
  if (spec.r > spec.n) throw config_error("synthetic spec: rank r exceeds dimension n");
  if (spec.noise < 0) throw config_error("synthetic spec: negative noise");

  SyntheticQuadraticData<T> out;
  Rng param_rng = Rng::stream(spec.seed, "synthetic-params");
  Rng sample_rng = Rng::stream(spec.seed, "synthetic-samples");

  const std::size_t c = spec.classes, n = spec.n, r = spec.r;
  out.linear_w = Tensor<T>({c, n});
  out.quad_f = Tensor<T>({c, r, n});
  out.bias = Tensor<T>({c});
  const double lin_sigma = spec.linear_scale / std::sqrt(static_cast<double>(n));
  for (std::size_t i = 0; i < out.linear_w.numel(); ++i)
    out.linear_w[i] = static_cast<T>(lin_sigma * param_rng.gaussian());
  for (std::size_t j = 0; j < c && r > 0; ++j) {
    // rank-r PSD form, trace-normalized so classes stay balanced
    double trace = 0;
    std::vector<double> rows(r * n);
    for (auto& v : rows) v = param_rng.gaussian();
    for (std::size_t t = 0; t < r; ++t)
      for (std::size_t i = 0; i < n; ++i) trace += rows[t * n + i] * rows[t * n + i];
    const double scale = std::sqrt(spec.quad_scale / (trace > 0 ? trace : 1.0));
    for (std::size_t t = 0; t < r; ++t)
      for (std::size_t i = 0; i < n; ++i)
        out.quad_f(j, t, i) = static_cast<T>(rows[t * n + i] * scale);
  }

  auto score = [&](const std::vector<double>& x, std::size_t j) {
    double s = out.bias[j];
    for (std::size_t i = 0; i < n; ++i) s += out.linear_w(j, i) * x[i];
    for (std::size_t t = 0; t < r; ++t) {
      double proj = 0;
      for (std::size_t i = 0; i < n; ++i) proj += out.quad_f(j, t, i) * x[i];
      s += proj * proj;
    }
    return s;
  };

  auto fill = [&](Dataset<T>& d, std::size_t count) {
    d.class_count = static_cast<int>(c);
    d.x = Tensor<T>({count, n});
    d.labels.resize(count);
    std::size_t made = 0;
    while (made < count) {
      std::vector<double> x(n);
      for (auto& v : x) v = sample_rng.gaussian();
      double best = -1e300, second = -1e300;
      std::size_t arg = 0;
      for (std::size_t j = 0; j < c; ++j) {
        double s = score(x, j) + spec.noise * (spec.noise > 0 ? sample_rng.gaussian() : 0.0);
        if (s > best) {
          second = best;
          best = s;
          arg = j;
        } else if (s > second) {
          second = s;
        }
      }
      if (best - second < spec.margin) continue;  // ambiguous near the boundary
      for (std::size_t i = 0; i < n; ++i) d.x(made, i) = static_cast<T>(x[i]);
      d.labels[made] = static_cast<int>(arg);
      ++made;
    }
  };

  fill(out.train, spec.train_samples);
  fill(out.test, spec.test_samples);
  return out;
}

/// Image testbed whose class signal lives in second-order channel
/// statistics: each class draws pixels from its own 3-channel covariance
/// while all classes share the same mean. Written in the same [0,1] range as
/// decoded image files so it can stand in for them end to end.
struct SyntheticImageSpec {
  std::size_t classes = 10;
  std::size_t train_samples = 2000;
  std::size_t test_samples = 1000;
  std::size_t channels = 3;
  std::size_t size = 32;
  /// How far each class's channel covariance sits from the shared base;
  /// smaller values make classes harder to tell apart.
  double class_separation = 0.35;
  std::uint64_t seed = 1;
};

template <typename T>
std::pair<Dataset<T>, Dataset<T>> gen_synthetic_images(const SyntheticImageSpec& spec) {
  Rng param_rng = Rng::stream(spec.seed, "synthimg-params");
  Rng sample_rng = Rng::stream(spec.seed, "synthimg-samples");
  const std::size_t ch = spec.channels;

  // Classes differ only in their cross-channel correlation structure: every
  // class covariance is renormalized to a correlation matrix (unit
  // diagonal), so per-channel means and variances carry no class signal and
  // second-order statistics are the only separator.
  auto correlation_root = [&](double separation, const std::vector<double>& base) {
    std::vector<double> r(ch * ch);
    for (std::size_t i = 0; i < r.size(); ++i)
      r[i] = base[i] + separation * param_rng.gaussian();
    // sigma = r r^T + eps I
    std::vector<double> sigma(ch * ch, 0.0);
    for (std::size_t a = 0; a < ch; ++a)
      for (std::size_t b = 0; b < ch; ++b) {
        for (std::size_t i = 0; i < ch; ++i) sigma[a * ch + b] += r[a * ch + i] * r[b * ch + i];
        if (a == b) sigma[a * ch + b] += 1e-3;
      }
    // renormalize to unit diagonal
    for (std::size_t a = 0; a < ch; ++a)
      for (std::size_t b = 0; b < ch; ++b)
        if (a != b)
          sigma[a * ch + b] /=
              std::sqrt(sigma[a * ch + a] * sigma[b * ch + b]);
    for (std::size_t a = 0; a < ch; ++a) sigma[a * ch + a] = 1.0;
    // Cholesky factor used as the sampling root
    std::vector<double> chol(ch * ch, 0.0);
    for (std::size_t a = 0; a < ch; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        double acc = sigma[a * ch + b];
        for (std::size_t i = 0; i < b; ++i) acc -= chol[a * ch + i] * chol[b * ch + i];
        if (a == b)
          chol[a * ch + a] = std::sqrt(acc > 1e-12 ? acc : 1e-12);
        else
          chol[a * ch + b] = acc / chol[b * ch + b];
      }
    }
    return chol;
  };

  std::vector<double> base(ch * ch);
  for (auto& v : base) v = param_rng.gaussian();
  std::vector<std::vector<double>> roots;
  for (std::size_t t = 0; t < spec.classes; ++t)
    roots.push_back(correlation_root(spec.class_separation, base));

  auto fill = [&](Dataset<T>& d, std::size_t count) {
    d.class_count = static_cast<int>(spec.classes);
    d.x = Tensor<T>({count, ch, spec.size, spec.size});
    d.labels.resize(count);
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t label = s % spec.classes;  // exactly class-balanced
      d.labels[s] = static_cast<int>(label);
      const auto& m = roots[label];
      for (std::size_t py = 0; py < spec.size; ++py)
        for (std::size_t px = 0; px < spec.size; ++px) {
          std::vector<double> z(ch);
          for (auto& v : z) v = sample_rng.gaussian();
          for (std::size_t a = 0; a < ch; ++a) {
            double v = 0;
            for (std::size_t b = 0; b < ch; ++b) v += m[a * ch + b] * z[b];
            v = 0.5 + 0.15 * v;
            v = v < 0 ? 0 : (v > 1 ? 1 : v);
            d.x(s, a, py, px) = static_cast<T>(v);
          }
        }
    }
  };

  std::pair<Dataset<T>, Dataset<T>> out;
  fill(out.first, spec.train_samples);
  fill(out.second, spec.test_samples);
  compute_channel_stats(out.first);
  out.second.channel_mean = out.first.channel_mean;
  out.second.channel_std = out.first.channel_std;
  out.second.stats_from_train = true;
  return out;
}

}  // namespace fbk::data
