#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fbk/fb_layer.hpp"
#include "fbk/oracles.hpp"
#include "fbk/rng.hpp"
#include "fbk/tensor.hpp"

namespace fbk::bench {

/// Parameter-count and computation-order formulas for the four second-order
/// methods, instantiated at one operating point (n input features, c output
/// units, d projected dimension for the compact-pooling methods, k factors).
struct Table1Report {
  std::uint64_t n = 0, c = 0, d = 0, k = 0;

  std::uint64_t bilinear_params = 0;    // c * n^2
  std::uint64_t rm_params = 0;          // 2nd + cd
  std::uint64_t ts_params = 0;          // 2n + cd
  std::uint64_t factorized_params = 0;  // c * k * n

  double bilinear_compute = 0;    // O(c n^2)
  double rm_compute = 0;          // O(c n d)
  double ts_compute = 0;          // O(c (n + d log2 d))
  double factorized_compute = 0;  // O(c k n)
};

inline Table1Report table1_instantiate(std::uint64_t n, std::uint64_t c, std::uint64_t d,
                                       std::uint64_t k) {
  if (n == 0 || c == 0 || d == 0 || k == 0) {
    throw config_error("table1_instantiate wants positive n, c, d, k");
  }
  Table1Report r;
  r.n = n;
  r.c = c;
  r.d = d;
  r.k = k;
  r.bilinear_params = c * n * n;
  r.rm_params = 2 * n * d + c * d;
  r.ts_params = 2 * n + c * d;
  r.factorized_params = c * k * n;
  r.bilinear_compute = static_cast<double>(c) * static_cast<double>(n) * static_cast<double>(n);
  r.rm_compute = static_cast<double>(c) * static_cast<double>(n) * static_cast<double>(d);
  r.ts_compute = static_cast<double>(c) *
                 (static_cast<double>(n) + static_cast<double>(d) * std::log2(static_cast<double>(d)));
  r.factorized_compute =
      static_cast<double>(c) * static_cast<double>(k) * static_cast<double>(n);
  return r;
}

/// Closed form for the instrumented forward MAC count of the factorized
/// layer: n for the linear dot, 2kn for the left/right factor projections,
/// k for the gated contraction, per sample and output unit.
inline std::uint64_t fb_forward_mac_closed_form(std::uint64_t batch, std::uint64_t c,
                                                std::uint64_t n, std::uint64_t k) {
  return batch * c * (n + 2 * k * n + k);
}

struct SweepPoint {
  std::size_t n = 0;
  std::size_t k = 0;
  double seconds_per_eval = 0;  // median over repetitions
  std::uint64_t macs_per_eval = 0;
  bool reliable = true;  // false when timer resolution exceeds 1% of the measurement
};

struct ScalingSweep {
  std::string path;  // "factorized" or "naive"
  std::string axis;  // "n" or "k"
  std::vector<SweepPoint> points;
  double loglog_slope = 0;
};

struct SweepConfig {
  std::vector<std::size_t> ns{256, 512, 1024, 2048, 4096};
  std::vector<std::size_t> naive_ns{256, 512, 1024, 2048, 4096};
  std::vector<std::size_t> ks{2, 4, 8, 16, 32};
  std::size_t fixed_k = 8;
  std::size_t fixed_n = 1024;
  std::size_t batch = 32;
  std::size_t c = 64;
  std::size_t naive_batch = 2;
  std::size_t naive_c = 2;
  std::size_t naive_k = 2;
  std::size_t repetitions = 5;
  double min_measured_seconds = 0.01;
  std::uint64_t seed = 1234;
};

struct RuntimeReport {
  ScalingSweep factorized_vs_n;
  ScalingSweep naive_vs_n;
  ScalingSweep factorized_vs_k;
  double timer_resolution_seconds = 0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double timer_resolution_seconds() {
  double best = 1.0;
  for (int trial = 0; trial < 64; ++trial) {
    auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best, std::chrono::duration<double>(b - a).count());
  }
  return best;
}

struct Timing {
  double per_eval_seconds = 0;
  double min_batch_seconds = 0;  // smallest raw measurement backing the median
};

/// Times one thunk: calibrates an inner iteration count so each raw
/// measurement exceeds min_seconds, then reports the median of `reps`
/// measurements normalized per evaluation.
inline Timing time_per_eval(const std::function<void()>& fn, std::size_t reps,
                            double min_seconds) {
  std::size_t iters = 1;
  for (;;) {
    auto start = Clock::now();
    for (std::size_t i = 0; i < iters; ++i) fn();
    const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    if (elapsed >= min_seconds || iters >= (1u << 20)) break;
    iters *= 2;
  }
  std::vector<double> samples;
  double min_batch = 1e30;
  for (std::size_t r = 0; r < reps; ++r) {
    auto start = Clock::now();
    for (std::size_t i = 0; i < iters; ++i) fn();
    const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    min_batch = std::min(min_batch, elapsed);
    samples.push_back(elapsed / static_cast<double>(iters));
  }
  std::sort(samples.begin(), samples.end());
  return Timing{samples[samples.size() / 2], min_batch};
}

inline double loglog_slope(const std::vector<SweepPoint>& pts, bool vs_k) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(pts.size());
  for (const auto& p : pts) {
    const double x = std::log(static_cast<double>(vs_k ? p.k : p.n));
    const double y = std::log(p.seconds_per_eval);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

template <typename T>
FbLayerParams<T> sized_params(std::size_t c, std::size_t n, std::size_t k, Rng& rng) {
  FbLayerParams<T> p;
  p.c = c;
  p.n = n;
  p.k = k;
  p.weight = Tensor<T>({c, n});
  p.bias = Tensor<T>({c});
  p.factors = Tensor<T>({c, k, n});
  for (std::size_t i = 0; i < p.weight.numel(); ++i)
    p.weight[i] = static_cast<T>(rng.uniform(-1, 1));
  for (std::size_t i = 0; i < p.factors.numel(); ++i)
    p.factors[i] = static_cast<T>(rng.uniform(-1, 1));
  return p;
}

}  // namespace detail

/// Wallclock scaling of the factorized forward versus the literal O(kn^2)
/// expansion. The factorized path should come out close to slope 1 in both
/// n and k; the naive path close to slope 2 in n. Runs single-threaded;
/// repetitions are sequential and buffers are allocated outside the timed
/// region.
inline RuntimeReport runtime_sweep(const SweepConfig& cfg = {}) {
  using T = double;
  RuntimeReport report;
  report.timer_resolution_seconds = detail::timer_resolution_seconds();
  Rng rng(cfg.seed);

  // a point is reliable when timer resolution stays below 1% of each raw
  // measurement backing it
  auto apply_timing = [&](SweepPoint& pt, const detail::Timing& t) {
    pt.seconds_per_eval = t.per_eval_seconds;
    pt.reliable = t.min_batch_seconds > 100.0 * report.timer_resolution_seconds;
  };

  report.factorized_vs_n.path = "factorized";
  report.factorized_vs_n.axis = "n";
  for (std::size_t n : cfg.ns) {
    auto params = detail::sized_params<T>(cfg.c, n, cfg.fixed_k, rng);
    Tensor<T> x({cfg.batch, n});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.uniform(-1, 1));
    auto mask = inference_mask<T>(cfg.fixed_k, T(1));
    MacCounter macs;
    fb_forward(x, params, mask, &macs);
    SweepPoint pt;
    pt.n = n;
    pt.k = cfg.fixed_k;
    pt.macs_per_eval = macs.total();
    volatile T sink = 0;
    apply_timing(pt, detail::time_per_eval(
                         [&] {
                           auto y = fb_forward(x, params, mask);
                           sink = sink + y[0];
                         },
                         cfg.repetitions, cfg.min_measured_seconds));
    report.factorized_vs_n.points.push_back(pt);
  }
  report.factorized_vs_n.loglog_slope =
      detail::loglog_slope(report.factorized_vs_n.points, false);

  report.naive_vs_n.path = "naive";
  report.naive_vs_n.axis = "n";
  for (std::size_t n : cfg.naive_ns) {
    auto params = detail::sized_params<T>(cfg.naive_c, n, cfg.naive_k, rng);
    Tensor<T> x({cfg.naive_batch, n});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.uniform(-1, 1));
    MacCounter macs;
    oracles::naive_fb_batch(x, params, T(1), &macs);
    SweepPoint pt;
    pt.n = n;
    pt.k = cfg.naive_k;
    pt.macs_per_eval = macs.total();
    volatile T sink = 0;
    apply_timing(pt, detail::time_per_eval(
                         [&] {
                           auto y = oracles::naive_fb_batch(x, params, T(1));
                           sink = sink + y[0];
                         },
                         cfg.repetitions, cfg.min_measured_seconds));
    report.naive_vs_n.points.push_back(pt);
  }
  report.naive_vs_n.loglog_slope = detail::loglog_slope(report.naive_vs_n.points, false);

  report.factorized_vs_k.path = "factorized";
  report.factorized_vs_k.axis = "k";
  for (std::size_t k : cfg.ks) {
    auto params = detail::sized_params<T>(cfg.c, cfg.fixed_n, k, rng);
    Tensor<T> x({cfg.batch, cfg.fixed_n});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.uniform(-1, 1));
    auto mask = inference_mask<T>(k, T(1));
    MacCounter macs;
    fb_forward(x, params, mask, &macs);
    SweepPoint pt;
    pt.n = cfg.fixed_n;
    pt.k = k;
    pt.macs_per_eval = macs.total();
    volatile T sink = 0;
    apply_timing(pt, detail::time_per_eval(
                         [&] {
                           auto y = fb_forward(x, params, mask);
                           sink = sink + y[0];
                         },
                         cfg.repetitions, cfg.min_measured_seconds));
    report.factorized_vs_k.points.push_back(pt);
  }
  report.factorized_vs_k.loglog_slope =
      detail::loglog_slope(report.factorized_vs_k.points, true);

  return report;
}

/// Verifies the instrumented counter against the closed form on a grid.
struct MacAuditRow {
  std::size_t batch, c, n, k;
  std::uint64_t measured;
  std::uint64_t closed_form;
  bool ok;
};

inline std::vector<MacAuditRow> audit_forward_macs(
    const std::vector<std::array<std::size_t, 4>>& grid, std::uint64_t seed = 7) {
  using T = double;
  Rng rng(seed);
  std::vector<MacAuditRow> rows;
  for (const auto& [batch, c, n, k] : grid) {
    auto params = detail::sized_params<T>(c, n, k, rng);
    Tensor<T> x({batch, n});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(rng.uniform(-1, 1));
    MacCounter macs;
    fb_forward(x, params, inference_mask<T>(k, T(1)), &macs);
    MacAuditRow row{batch, c, n, k, macs.total(),
                    fb_forward_mac_closed_form(batch, c, n, k), false};
    row.ok = row.measured == row.closed_form;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace fbk::bench
