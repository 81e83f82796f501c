#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fbk/bench.hpp"
#include "fbk/config.hpp"
#include "fbk/data/cifar.hpp"
#include "fbk/data/dataset.hpp"
#include "fbk/data/synthetic.hpp"
#include "fbk/digest.hpp"
#include "fbk/errors.hpp"
#include "fbk/fb_conv.hpp"
#include "fbk/fb_layer.hpp"
#include "fbk/nn/checkpoint.hpp"
#include "fbk/nn/network.hpp"
#include "fbk/nn/presets.hpp"
#include "fbk/nn/train.hpp"
#include "fbk/oracles.hpp"

namespace fbk::commands {

using nlohmann::json;

/// Exit codes shared by every subcommand: 0 pass, 1 verification failure,
/// 2 usage/config error, 3 I/O error.
enum ExitCode : int { kPass = 0, kVerificationFailure = 1, kConfigError = 2, kIoError = 3 };

struct CommandContext {
  Config config;
  std::string out_dir;  // empty: reports go to stdout only
  std::size_t threads = 1;
  std::string data_dir;  // dataset root (FBK_DATA_DIR)
  std::ostream* log = &std::cout;
};

namespace detail {

inline json base_report(const CommandContext& ctx, const std::string& command) {
  json r;
  r["command"] = command;
  r["config"] = ctx.config.values();
  r["config_digest"] = git_blob_hash(ctx.config.canonical_text());
  r["seed"] = ctx.config.get_int("seed", 1);
  r["input_hashes"] = json::object();
  return r;
}

inline void write_report(const CommandContext& ctx, const json& report) {
  if (ctx.out_dir.empty()) return;
  namespace fs = std::filesystem;
  fs::create_directories(ctx.out_dir);
  const std::string path = (fs::path(ctx.out_dir) / "report.json").string();
  std::ofstream os(path);
  os << report.dump(2) << "\n";
  if (!os) throw io_error("cannot write report " + path);
}

inline void hash_input(json& report, const std::string& path) {
  report["input_hashes"][path] = git_blob_hash_file(path);
}

/// Worst-coordinate finite-difference comparison for one tensor.
struct FdComparison {
  double max_rel_err = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
};

template <typename LossFn>
FdComparison compare_fd(const LossFn& loss, Tensor<double>& param,
                        const Tensor<double>& analytic, double h, double abs_floor = 1e-8) {
  FdComparison cmp;
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = loss();
    param[i] = saved - h;
    const double down = loss();
    param[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double a = analytic[i];
    // absolute differences below the finite-difference noise floor pass;
    // everything else is judged relatively
    const double diff = std::abs(a - fd);
    const double scale = std::max(std::abs(a), std::abs(fd));
    const double rel = diff <= abs_floor ? 0.0 : diff / scale;
    if (rel >= cmp.max_rel_err) {
      cmp.max_rel_err = rel;
      cmp.worst_index = i;
      cmp.analytic_at_worst = a;
      cmp.numeric_at_worst = fd;
    }
  }
  return cmp;
}

inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& d_y) {
  double acc = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * d_y[i];
  return acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gradcheck

/// Runs the finite-difference suites over dense and convolutional FB layers
/// across the configured factor counts and both mask modes. Exit 1 on any
/// relative error above the threshold, with the worst offender named in the
/// report.
inline int cmd_gradcheck(const CommandContext& ctx) {
  const double tol = ctx.config.get_double("tolerance", 1e-5);
  const double h = ctx.config.get_double("fd_step", 1e-5);
  const auto ks = ctx.config.get_size_list("ks", {0, 1, 5, 20});
  const double p_train = ctx.config.get_double("p_train", 0.5);
  const double p_infer = ctx.config.get_double("p_infer", 0.7);
  const std::uint64_t seed = static_cast<std::uint64_t>(ctx.config.get_int("seed", 1));
  const bool negative_control = ctx.config.get_bool("negative_control", false);

  json report = detail::base_report(ctx, "gradcheck");
  json cases = json::array();
  double overall_max = 0;
  std::string overall_worst;

  Rng rng(seed);
  auto run_dense = [&](std::size_t k, MaskMode mode) {
    const std::size_t n = 6, c = 3, batch = 2;
    FbLayerParams<double> params;
    params.c = c;
    params.n = n;
    params.k = k;
    params.weight = Tensor<double>({c, n});
    params.bias = Tensor<double>({c});
    params.factors = Tensor<double>({c, k, n});
    const double sf = k ? 1.0 / std::sqrt(static_cast<double>(k * n)) : 1.0;
    for (std::size_t i = 0; i < params.weight.numel(); ++i)
      params.weight[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < params.bias.numel(); ++i) params.bias[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < params.factors.numel(); ++i)
      params.factors[i] = sf * rng.uniform(-1, 1);
    Tensor<double> x({batch, n});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);
    Tensor<double> d_y({batch, c});
    for (std::size_t i = 0; i < d_y.numel(); ++i) d_y[i] = rng.uniform(-1, 1);

    DropFactorMask<double> mask = mode == MaskMode::training
                                      ? sample_mask<double>(k, p_train, rng)
                                      : inference_mask<double>(k, p_infer);
    FbForwardCache<double> cache;
    fb_forward(x, params, mask, &cache);
    auto grads = fb_backward(d_y, cache, params, mask);
    if (negative_control && grads.d_bias.numel()) grads.d_bias[0] = -grads.d_bias[0] - 1.0;

    auto loss = [&]() { return detail::weighted_sum(fb_forward(x, params, mask), d_y); };
    auto loss_x = [&]() { return detail::weighted_sum(fb_forward(x, params, mask), d_y); };

    struct Entry {
      const char* name;
      Tensor<double>* param;
      const Tensor<double>* analytic;
    };
    std::vector<Entry> entries = {{"weight", &params.weight, &grads.d_weight},
                                  {"bias", &params.bias, &grads.d_bias},
                                  {"factors", &params.factors, &grads.d_factors},
                                  {"input", &x, &grads.d_x}};
    json jcase;
    jcase["kind"] = "dense";
    jcase["k"] = k;
    jcase["mode"] = mode == MaskMode::training ? "training" : "inference";
    double case_max = 0;
    for (auto& e : entries) {
      auto cmp = e.param == &x ? detail::compare_fd(loss_x, *e.param, *e.analytic, h)
                               : detail::compare_fd(loss, *e.param, *e.analytic, h);
      jcase["tensors"][e.name] = {{"max_rel_err", cmp.max_rel_err},
                                  {"worst_index", cmp.worst_index},
                                  {"analytic", cmp.analytic_at_worst},
                                  {"numeric", cmp.numeric_at_worst}};
      if (cmp.max_rel_err > case_max) case_max = cmp.max_rel_err;
      if (cmp.max_rel_err > overall_max) {
        overall_max = cmp.max_rel_err;
        overall_worst = "dense k=" + std::to_string(k) + " " + e.name + "[" +
                        std::to_string(cmp.worst_index) + "]";
      }
    }
    jcase["max_rel_err"] = case_max;
    cases.push_back(jcase);
  };

  auto run_conv = [&](std::size_t kernel, std::size_t k, MaskMode mode) {
    const std::size_t c_in = kernel == 1 ? 5 : 2;
    const std::size_t hw = kernel == 1 ? 3 : 5;
    ConvGeometry g{c_in, 2, kernel, kernel, 1, kernel / 2};
    FbConvLayer<double> layer;
    layer.geometry = g;
    layer.params.c = g.out_channels;
    layer.params.n = g.patch_len();
    layer.params.k = k;
    layer.params.weight = Tensor<double>({layer.params.c, layer.params.n});
    layer.params.bias = Tensor<double>({layer.params.c});
    layer.params.factors = Tensor<double>({layer.params.c, k, layer.params.n});
    layer.p = p_train;
    const double sf = k ? 1.0 / std::sqrt(static_cast<double>(k * layer.params.n)) : 1.0;
    for (std::size_t i = 0; i < layer.params.weight.numel(); ++i)
      layer.params.weight[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < layer.params.bias.numel(); ++i)
      layer.params.bias[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < layer.params.factors.numel(); ++i)
      layer.params.factors[i] = sf * rng.uniform(-1, 1);
    Tensor<double> x({2, c_in, hw, hw});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);
    Tensor<double> d_y({2, 2, g.out_h(hw), g.out_w(hw)});
    for (std::size_t i = 0; i < d_y.numel(); ++i) d_y[i] = rng.uniform(-1, 1);

    DropFactorMask<double> mask = mode == MaskMode::training
                                      ? sample_mask<double>(k, p_train, rng)
                                      : inference_mask<double>(k, p_infer);
    FbConvCache<double> cache;
    fb_conv_forward(x, layer, mask, &cache);
    Tensor<double> d_x;
    auto grads = fb_conv_backward(d_y, cache, layer, mask, &d_x);
    if (negative_control && grads.d_bias.numel()) grads.d_bias[0] = -grads.d_bias[0] - 1.0;

    auto loss = [&]() {
      return detail::weighted_sum(fb_conv_forward(x, layer, mask), d_y);
    };
    struct Entry {
      const char* name;
      Tensor<double>* param;
      const Tensor<double>* analytic;
    };
    std::vector<Entry> entries = {{"weight", &layer.params.weight, &grads.d_weight},
                                  {"bias", &layer.params.bias, &grads.d_bias},
                                  {"factors", &layer.params.factors, &grads.d_factors},
                                  {"input", &x, &d_x}};
    json jcase;
    jcase["kind"] = "conv";
    jcase["kernel"] = kernel;
    jcase["k"] = k;
    jcase["mode"] = mode == MaskMode::training ? "training" : "inference";
    double case_max = 0;
    for (auto& e : entries) {
      auto cmp = detail::compare_fd(loss, *e.param, *e.analytic, h);
      jcase["tensors"][e.name] = {{"max_rel_err", cmp.max_rel_err},
                                  {"worst_index", cmp.worst_index},
                                  {"analytic", cmp.analytic_at_worst},
                                  {"numeric", cmp.numeric_at_worst}};
      if (cmp.max_rel_err > case_max) case_max = cmp.max_rel_err;
      if (cmp.max_rel_err > overall_max) {
        overall_max = cmp.max_rel_err;
        overall_worst = "conv " + std::to_string(kernel) + "x" + std::to_string(kernel) +
                        " k=" + std::to_string(k) + " " + e.name + "[" +
                        std::to_string(cmp.worst_index) + "]";
      }
    }
    jcase["max_rel_err"] = case_max;
    cases.push_back(jcase);
  };

  for (std::size_t k : ks) {
    for (MaskMode mode : {MaskMode::training, MaskMode::inference}) {
      run_dense(k, mode);
      run_conv(1, k, mode);
      run_conv(3, k, mode);
    }
  }

  report["cases"] = cases;
  report["max_rel_err"] = overall_max;
  report["worst"] = overall_worst;
  report["tolerance"] = tol;
  const bool pass = overall_max <= tol;
  report["pass"] = pass;
  detail::write_report(ctx, report);
  (*ctx.log) << "gradcheck: max relative error " << overall_max << " (tolerance " << tol
             << ")";
  if (!pass) (*ctx.log) << " worst offender: " << overall_worst;
  (*ctx.log) << (pass ? " PASS" : " FAIL") << "\n";
  return pass ? kPass : kVerificationFailure;
}

// ---------------------------------------------------------------------------
// oracle-compare

/// The 1x1 FB conv + global average pool pipeline over a feature map whose
/// channel vectors are the rows of `features`.
inline std::vector<double> fb_gap_pipeline(const FbLayerParams<double>& params,
                                           const Tensor<double>& features) {
  const std::size_t s_count = features.extent(0), n = features.extent(1), c = params.c;
  FbConvLayer<double> layer;
  layer.geometry = ConvGeometry{n, c, 1, 1, 1, 0};
  layer.params = params;
  layer.p = 1.0;
  Tensor<double> x({1, n, s_count, 1});
  for (std::size_t s = 0; s < s_count; ++s)
    for (std::size_t ch = 0; ch < n; ++ch) x(0, ch, s, 0) = features(s, ch);
  auto y = fb_conv_forward(x, layer, inference_mask<double>(params.k, 1.0));
  std::vector<double> pooled(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t s = 0; s < s_count; ++s) pooled[j] += y(0, j, s, 0);
    pooled[j] /= static_cast<double>(s_count);
  }
  return pooled;
}

/// Cross-checks the fast kernels against every brute-force reference:
/// dual-path bilinear pooling, the constructed pooling model versus the FB
/// pipeline, the literal double-sum expansion, the sparse FM route, and the
/// low-rank structure of the constructed interaction matrices.
inline int cmd_oracle_compare(const CommandContext& ctx) {
  const double tol = ctx.config.get_double("tolerance", 1e-10);
  const std::size_t trials = static_cast<std::size_t>(ctx.config.get_int("trials", 20));
  const std::uint64_t seed = static_cast<std::uint64_t>(ctx.config.get_int("seed", 1));
  Rng rng(seed);

  json report = detail::base_report(ctx, "oracle-compare");
  json checks = json::array();
  bool pass = true;

  auto random_params = [&](std::size_t c, std::size_t n, std::size_t k) {
    FbLayerParams<double> p;
    p.c = c;
    p.n = n;
    p.k = k;
    p.weight = Tensor<double>({c, n});
    p.bias = Tensor<double>({c});
    p.factors = Tensor<double>({c, k, n});
    for (std::size_t i = 0; i < p.weight.numel(); ++i) p.weight[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < p.bias.numel(); ++i) p.bias[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < p.factors.numel(); ++i) p.factors[i] = rng.uniform(-1, 1);
    return p;
  };

  // bilinear pooling evaluated along both algebraic routes
  {
    double worst = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t n = 2 + rng.integer(6), c = 1 + rng.integer(4),
                        s_count = 1 + rng.integer(6);
      oracles::BilinearPoolingModel<double> model;
      model.n = n;
      model.weight = Tensor<double>({c, n * n});
      model.bias = Tensor<double>({c});
      for (std::size_t i = 0; i < model.weight.numel(); ++i)
        model.weight[i] = rng.uniform(-1, 1);
      for (std::size_t i = 0; i < model.bias.numel(); ++i) model.bias[i] = rng.uniform(-1, 1);
      Tensor<double> f({s_count, n});
      for (std::size_t i = 0; i < f.numel(); ++i) f[i] = rng.uniform(-1, 1);
      worst = std::max(worst, static_cast<double>(oracles::bilinear_classify(f, model).max_abs_diff));
    }
    checks.push_back({{"name", "bilinear dual-path"}, {"max_abs_diff", worst}, {"tol", tol},
                      {"pass", worst <= tol}});
    pass = pass && worst <= tol;
  }

  // constructed pooling model vs the FB conv + average pooling pipeline
  {
    double worst = 0;
    json sides = json::array();
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t n = 2 + rng.integer(5), c = 1 + rng.integer(3),
                        k = rng.integer(4), s_count = 1 + rng.integer(5);
      auto params = random_params(c, n, k);
      Tensor<double> f({s_count, n});
      for (std::size_t i = 0; i < f.numel(); ++i) f[i] = rng.uniform(-1, 1);
      auto rep = oracles::fb_construction_oracle(params, f, fb_gap_pipeline(params, f));
      worst = std::max(worst, rep.max_abs_diff);
      sides.push_back({{"inputs_digest", rep.inputs_digest},
                       {"pipeline", rep.pipeline},
                       {"oracle", rep.oracle},
                       {"max_abs_diff", rep.max_abs_diff},
                       {"locations", rep.location_count}});
    }
    checks.push_back({{"name", "construction vs pipeline"}, {"max_abs_diff", worst},
                      {"tol", tol}, {"pass", worst <= tol}, {"instances", sides}});
    pass = pass && worst <= tol;
  }

  // factorized forward vs the literal double sum
  {
    double worst = 0;
    for (std::size_t t = 0; t < 100; ++t) {
      const std::size_t n = 1 + rng.integer(32), c = 1 + rng.integer(4), k = rng.integer(9);
      auto params = random_params(c, n, k);
      const double p = (t % 2) ? 1.0 : 0.25 + 0.75 * rng.uniform();
      Tensor<double> x({1, n});
      for (std::size_t i = 0; i < n; ++i) x(0, i) = rng.uniform(-1, 1);
      auto fast = fb_forward(x, params, inference_mask<double>(k, p));
      auto slow = oracles::naive_fb_batch(x, params, p);
      for (std::size_t j = 0; j < c; ++j)
        worst = std::max(worst, std::abs(fast(0, j) - slow(0, j)));
    }
    checks.push_back({{"name", "factorized vs naive expansion"}, {"max_abs_diff", worst},
                      {"tol", tol}, {"pass", worst <= tol}});
    pass = pass && worst <= tol;
  }

  // sparse FM route vs densified forward
  {
    double worst = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t n = 8 + rng.integer(8), k = 1 + rng.integer(4);
      auto params = random_params(1, n, k);
      std::vector<std::pair<std::size_t, double>> sparse;
      Tensor<double> dense({1, n});
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() < 0.3) {
          const double v = rng.uniform(-2, 2);
          sparse.emplace_back(i, v);
          dense(0, i) = v;
        }
      }
      const double p = 0.25 + 0.75 * rng.uniform();
      const double via_fm = oracles::fm_predict(sparse, params, p);
      const double via_fb = fb_forward(dense, params, inference_mask<double>(k, p))(0, 0);
      worst = std::max(worst, std::abs(via_fm - via_fb));
    }
    checks.push_back({{"name", "sparse fm vs dense"}, {"max_abs_diff", worst},
                      {"tol", 1e-12}, {"pass", worst <= 1e-12}});
    pass = pass && worst <= 1e-12;
  }

  // constructed interaction matrices have numerical rank <= k
  {
    bool rank_ok = true;
    const std::size_t n = 10, k = 3;
    auto params = random_params(1, n, k);
    Tensor<double> w({n, n});
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        double acc = 0;
        for (std::size_t t = 0; t < k; ++t)
          acc += params.factors(0, t, a) * params.factors(0, t, b);
        w(a, b) = acc;
      }
    auto eigs = oracles::sym_top_eigenvalues(w, k + 3, rng);
    for (std::size_t e = k; e < eigs.size(); ++e)
      rank_ok = rank_ok && std::abs(eigs[e]) <= 1e-10 * eigs[0];
    checks.push_back({{"name", "construction rank <= k"}, {"pass", rank_ok}});
    pass = pass && rank_ok;
  }

  report["checks"] = checks;
  report["pass"] = pass;
  detail::write_report(ctx, report);
  for (const auto& c : checks)
    (*ctx.log) << "oracle-compare: " << c["name"].get<std::string>() << " "
               << (c["pass"].get<bool>() ? "PASS" : "FAIL") << "\n";
  return pass ? kPass : kVerificationFailure;
}

// ---------------------------------------------------------------------------
// bench

inline int cmd_bench(const CommandContext& ctx) {
  json report = detail::base_report(ctx, "bench");

  const auto n = static_cast<std::uint64_t>(ctx.config.get_int("table1_n", 512));
  const auto c = static_cast<std::uint64_t>(ctx.config.get_int("table1_c", 1000));
  const auto d = static_cast<std::uint64_t>(ctx.config.get_int("table1_d", 10000));
  const auto k = static_cast<std::uint64_t>(ctx.config.get_int("table1_k", 20));
  auto t1 = bench::table1_instantiate(n, c, d, k);
  report["table1"] = {{"at", {{"n", n}, {"c", c}, {"d", d}, {"k", k}}},
                      {"params",
                       {{"bilinear", t1.bilinear_params},
                        {"rm", t1.rm_params},
                        {"ts", t1.ts_params},
                        {"factorized", t1.factorized_params}}},
                      {"compute_order",
                       {{"bilinear", t1.bilinear_compute},
                        {"rm", t1.rm_compute},
                        {"ts", t1.ts_compute},
                        {"factorized", t1.factorized_compute}}}};

  std::vector<std::array<std::size_t, 4>> grid;
  for (std::size_t gn : {64u, 128u, 256u, 512u, 1024u})
    for (std::size_t gk : {0u, 2u, 8u}) grid.push_back({4, 8, gn, gk});
  auto audit = bench::audit_forward_macs(grid);
  bool macs_ok = true;
  json jaudit = json::array();
  for (const auto& row : audit) {
    macs_ok = macs_ok && row.ok;
    jaudit.push_back({{"batch", row.batch}, {"c", row.c}, {"n", row.n}, {"k", row.k},
                      {"measured", row.measured}, {"closed_form", row.closed_form},
                      {"ok", row.ok}});
  }
  report["mac_audit"] = jaudit;
  report["mac_audit_pass"] = macs_ok;

  bench::SweepConfig scfg;
  if (ctx.config.get_bool("quick", false)) {
    scfg.ns = {128, 256, 512};
    scfg.naive_ns = {128, 256, 512};
    scfg.ks = {2, 4, 8};
    scfg.repetitions = 3;
    scfg.min_measured_seconds = 0.002;
  }
  scfg.seed = static_cast<std::uint64_t>(ctx.config.get_int("seed", 1234));
  auto sweep = bench::runtime_sweep(scfg);

  auto sweep_json = [](const bench::ScalingSweep& s) {
    json out;
    out["path"] = s.path;
    out["axis"] = s.axis;
    out["loglog_slope"] = s.loglog_slope;
    out["points"] = json::array();
    for (const auto& p : s.points)
      out["points"].push_back({{"n", p.n}, {"k", p.k},
                               {"seconds_per_eval", p.seconds_per_eval},
                               {"macs_per_eval", p.macs_per_eval},
                               {"reliable", p.reliable}});
    return out;
  };
  report["sweeps"] = {{"factorized_vs_n", sweep_json(sweep.factorized_vs_n)},
                      {"naive_vs_n", sweep_json(sweep.naive_vs_n)},
                      {"factorized_vs_k", sweep_json(sweep.factorized_vs_k)}};
  report["timer_resolution_seconds"] = sweep.timer_resolution_seconds;

  // aligned text table
  std::ostringstream table;
  table << "method      params        compute\n";
  auto row = [&](const char* name, std::uint64_t params, double compute) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-10s  %-12llu  %.3e\n", name,
                  static_cast<unsigned long long>(params), compute);
    table << buf;
  };
  row("bilinear", t1.bilinear_params, t1.bilinear_compute);
  row("rm", t1.rm_params, t1.rm_compute);
  row("ts", t1.ts_params, t1.ts_compute);
  row("factorized", t1.factorized_params, t1.factorized_compute);
  table << "\npath        axis  slope\n";
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-10s  n     %.3f\n", "factorized",
                sweep.factorized_vs_n.loglog_slope);
  table << buf;
  std::snprintf(buf, sizeof buf, "%-10s  n     %.3f\n", "naive", sweep.naive_vs_n.loglog_slope);
  table << buf;
  std::snprintf(buf, sizeof buf, "%-10s  k     %.3f\n", "factorized",
                sweep.factorized_vs_k.loglog_slope);
  table << buf;
  report["table_text"] = table.str();
  (*ctx.log) << table.str();
  (*ctx.log) << "mac audit: " << (macs_ok ? "PASS" : "FAIL") << "\n";

  detail::write_report(ctx, report);
  return macs_ok ? kPass : kVerificationFailure;
}

// ---------------------------------------------------------------------------
// dataset resolution shared by train / eval / ablate

template <typename T>
struct ResolvedData {
  data::Dataset<T> train, test;
  std::string description;
};

template <typename T>
ResolvedData<T> resolve_dataset(const CommandContext& ctx, json* report) {
  const std::string name = ctx.config.get_string("dataset", "synthetic");
  ResolvedData<T> out;
  out.description = name;

  if (name == "synthetic") {
    data::SyntheticQuadraticSpec spec;
    spec.n = static_cast<std::size_t>(ctx.config.get_int("synthetic_n", 16));
    spec.r = static_cast<std::size_t>(ctx.config.get_int("synthetic_r", 4));
    spec.classes = static_cast<std::size_t>(ctx.config.get_int("classes", 4));
    spec.train_samples = static_cast<std::size_t>(ctx.config.get_int("train_samples", 4000));
    spec.test_samples = static_cast<std::size_t>(ctx.config.get_int("test_samples", 1000));
    spec.noise = ctx.config.get_double("noise", 0.0);
    spec.linear_scale = ctx.config.get_double("synthetic_linear_scale", 1.0);
    spec.quad_scale = ctx.config.get_double("synthetic_quad_scale", 1.0);
    spec.margin = ctx.config.get_double("synthetic_margin", 0.1);
    spec.seed = static_cast<std::uint64_t>(ctx.config.get_int("data_seed", 20240101));
    auto gen = data::gen_synthetic<T>(spec);
    out.train = std::move(gen.train);
    out.test = std::move(gen.test);
    return out;
  }

  if (name == "synthetic-images") {
    data::SyntheticImageSpec spec;
    spec.classes = static_cast<std::size_t>(ctx.config.get_int("classes", 10));
    spec.train_samples = static_cast<std::size_t>(ctx.config.get_int("train_samples", 2000));
    spec.test_samples = static_cast<std::size_t>(ctx.config.get_int("test_samples", 1000));
    spec.size = static_cast<std::size_t>(ctx.config.get_int("image_size", 32));
    spec.class_separation = ctx.config.get_double("image_class_separation", 0.35);
    spec.seed = static_cast<std::uint64_t>(ctx.config.get_int("data_seed", 20240101));
    auto [train, test] = data::gen_synthetic_images<T>(spec);
    out.train = std::move(train);
    out.test = std::move(test);
    return out;
  }

  if (name == "cifar10" || name == "cifar100") {
    if (ctx.data_dir.empty())
      throw config_error("dataset '" + name + "' needs a data directory (FBK_DATA_DIR)");
    const auto variant =
        name == "cifar10" ? data::CifarVariant::cifar10 : data::CifarVariant::cifar100;
    if (report) {
      namespace fs = std::filesystem;
      std::vector<std::string> files;
      if (variant == data::CifarVariant::cifar10) {
        for (int i = 1; i <= 5; ++i)
          files.push_back("data_batch_" + std::to_string(i) + ".bin");
        files.push_back("test_batch.bin");
      } else {
        files = {"train.bin", "test.bin"};
      }
      for (const auto& f : files) {
        const auto p = fs::path(ctx.data_dir) / f;
        if (fs::exists(p)) detail::hash_input(*report, p.string());
      }
    }
    auto [train, test] = data::load_cifar<T>(ctx.data_dir, variant);
    const std::size_t subset = static_cast<std::size_t>(ctx.config.get_int("subset", 0));
    if (subset > 0) {
      Rng rng = Rng::stream(static_cast<std::uint64_t>(ctx.config.get_int("seed", 1)), "subset");
      train = data::class_balanced_subset(train, subset, rng);
    }
    out.train = std::move(train);
    out.test = std::move(test);
    return out;
  }

  throw config_error("unknown dataset '" + name + "'");
}

template <typename T>
nn::PresetSpec resolve_preset(const CommandContext& ctx, const ResolvedData<T>& ds) {
  nn::PresetSpec spec;
  spec.name = ctx.config.get_string("preset", ds.train.is_image() ? "conv-fbn" : "fb-dense");
  spec.classes = static_cast<std::size_t>(ds.train.class_count);
  if (!ds.train.is_image()) {
    spec.input_dim = ds.train.x.extent(1);
  } else {
    spec.in_channels = ds.train.x.extent(1);
    spec.in_h = ds.train.x.extent(2);
    spec.in_w = ds.train.x.extent(3);
  }
  spec.k = static_cast<std::size_t>(ctx.config.get_int("k", 20));
  spec.p = ctx.config.get_double("p", 0.5);
  spec.fb_kernel = static_cast<std::size_t>(ctx.config.get_int("fb_kernel", 1));
  spec.sigma_f = ctx.config.get_double("sigma_f", -1.0);
  spec.inverted_dropfactor = ctx.config.get_bool("inverted_dropfactor", false);
  spec.decay_factors = ctx.config.get_bool("wd_on_factors", true);
  spec.dropout_keep = ctx.config.get_double("dropout_keep", 1.0);
  return spec;
}

inline nn::TrainSettings resolve_train_settings(const CommandContext& ctx) {
  nn::TrainSettings s;
  s.epochs = static_cast<std::size_t>(ctx.config.get_int("epochs", 30));
  s.batch_size = static_cast<std::size_t>(ctx.config.get_int("batch_size", 64));
  s.lr = ctx.config.get_double("lr", 0.05);
  s.momentum = ctx.config.get_double("momentum", 0.9);
  s.weight_decay = ctx.config.get_double("weight_decay", 1e-4);
  s.lr_decay_factor = ctx.config.get_double("lr_decay_factor", 0.1);
  s.lr_decay_epochs = ctx.config.get_size_list("lr_decay_epochs", {});
  s.warmup_epochs = static_cast<std::size_t>(ctx.config.get_int("warmup_epochs", 0));
  s.seed = static_cast<std::uint64_t>(ctx.config.get_int("seed", 1));
  s.augment = ctx.config.get_bool("augment", false);
  s.threads = ctx.threads;
  if (s.lr <= 0 || s.lr_decay_factor <= 0)
    throw config_error("learning rates must be positive");
  if (s.momentum < 0 || s.weight_decay < 0)
    throw config_error("momentum and weight decay must be non-negative");
  if (s.batch_size == 0) throw config_error("batch_size must be positive");
  for (std::size_t i = 1; i < s.lr_decay_epochs.size(); ++i)
    if (s.lr_decay_epochs[i] < s.lr_decay_epochs[i - 1])
      throw config_error("lr_decay_epochs must be non-decreasing");
  return s;
}

// ---------------------------------------------------------------------------
// train / eval

template <typename T>
int run_train_typed(const CommandContext& ctx) {
  namespace fs = std::filesystem;
  json report = detail::base_report(ctx, "train");
  auto ds = resolve_dataset<T>(ctx, &report);
  auto preset = resolve_preset<T>(ctx, ds);
  auto settings = resolve_train_settings(ctx);
  settings.augment = ctx.config.get_bool("augment", ds.train.is_image());

  Rng init = Rng::stream(settings.seed, "init");
  auto net = nn::build_preset<T>(preset, init);

  const bool resuming = ctx.config.get_bool("resume", false);
  std::ofstream metrics;
  if (!ctx.out_dir.empty()) {
    fs::create_directories(ctx.out_dir);
    metrics.open((fs::path(ctx.out_dir) / "metrics.jsonl").string(),
                 resuming ? std::ios::app : std::ios::out);
  }
  auto on_epoch = [&](const nn::EpochMetrics& m) {
    json line = {{"epoch", m.epoch},         {"lr", m.lr},
                 {"train_loss", m.train_loss}, {"train_err", m.train_err},
                 {"test_err", m.test_err},     {"wallclock", m.wall_seconds}};
    if (metrics.is_open()) metrics << line.dump() << "\n" << std::flush;
    (*ctx.log) << line.dump() << "\n";
  };

  nn::SgdState<T> opt;
  Rng data_rng = Rng::stream(settings.seed, "data");
  Rng mask_rng = Rng::stream(settings.seed, "mask");
  Rng aug_rng = Rng::stream(settings.seed, "augment");
  std::size_t start_epoch = 0;

  const std::string ckpt_dir =
      ctx.out_dir.empty() ? "" : (fs::path(ctx.out_dir) / "checkpoints").string();
  if (resuming) {
    if (ckpt_dir.empty() || !fs::exists(fs::path(ckpt_dir) / "manifest.json"))
      throw config_error("resume requested but no checkpoint found under " + ckpt_dir);
    nn::RngStates states;
    start_epoch = nn::load_checkpoint(ckpt_dir, net, opt, states);
    data_rng.load_state(states.data);
    mask_rng.load_state(states.mask);
    aug_rng.load_state(states.augment);
    detail::hash_input(report, (fs::path(ckpt_dir) / "manifest.json").string());
  }

  std::function<void(std::size_t)> after_epoch;
  if (!ckpt_dir.empty()) {
    after_epoch = [&](std::size_t next_epoch) {
      nn::RngStates states{data_rng.save_state(), mask_rng.save_state(),
                           aug_rng.save_state()};
      nn::save_checkpoint(ckpt_dir, net, opt, next_epoch, states);
    };
  }

  auto outcome = nn::train_model(net, ds.train, ds.test, settings, on_epoch, &opt,
                                 start_epoch, &data_rng, &mask_rng, &aug_rng, after_epoch);

  report["dataset"] = ds.description;
  report["network"] = net.describe();
  report["parameter_count"] = net.parameter_count();
  report["epochs_run"] = outcome.history.size();
  report["final_test_err"] = outcome.final_test_err;
  if (!outcome.history.empty()) {
    report["final_train_loss"] = outcome.history.back().train_loss;
    report["final_train_err"] = outcome.history.back().train_err;
  }
  detail::write_report(ctx, report);
  return kPass;
}

inline int cmd_train(const CommandContext& ctx) {
  const std::string precision = ctx.config.get_string("precision", "f64");
  if (precision == "f64") return run_train_typed<double>(ctx);
  if (precision == "f32") return run_train_typed<float>(ctx);
  throw config_error("precision must be f32 or f64, got '" + precision + "'");
}

template <typename T>
int run_eval_typed(const CommandContext& ctx) {
  namespace fs = std::filesystem;
  json report = detail::base_report(ctx, "eval");
  auto ds = resolve_dataset<T>(ctx, &report);
  auto preset = resolve_preset<T>(ctx, ds);

  Rng init = Rng::stream(static_cast<std::uint64_t>(ctx.config.get_int("seed", 1)), "init");
  auto net = nn::build_preset<T>(preset, init);

  const std::string ckpt = ctx.config.get_string("checkpoint", "");
  if (!ckpt.empty()) {
    nn::SgdState<T> opt;
    nn::RngStates states;
    nn::load_checkpoint(ckpt, net, opt, states);
    detail::hash_input(report, (fs::path(ckpt) / "manifest.json").string());
  }

  const double err = nn::evaluate_error(net, ds.test,
                                        static_cast<std::size_t>(ctx.config.get_int("eval_batch", 256)),
                                        ctx.threads);
  report["dataset"] = ds.description;
  report["checkpoint"] = ckpt;
  report["test_err"] = err;
  detail::write_report(ctx, report);
  (*ctx.log) << "eval: test error " << err << "\n";
  return kPass;
}

inline int cmd_eval(const CommandContext& ctx) {
  const std::string precision = ctx.config.get_string("precision", "f64");
  if (precision == "f64") return run_eval_typed<double>(ctx);
  if (precision == "f32") return run_eval_typed<float>(ctx);
  throw config_error("precision must be f32 or f64, got '" + precision + "'");
}

// ---------------------------------------------------------------------------
// ablate

/// Trains a small matrix of configurations under one budget and emits a
/// table mirroring the published ablation grids: factor-count sweep,
/// retain-probability sweep, head kernel size, and unit dropout versus
/// DropFactor. Exceeding the wallclock cap truncates the table with an
/// explicit marker.
inline int cmd_ablate(const CommandContext& ctx) {
  namespace fs = std::filesystem;
  const std::string which = ctx.config.get_string("ablation", "k-sweep");
  const double cap_minutes = ctx.config.get_double("wallclock_cap_minutes", 30.0);
  json report = detail::base_report(ctx, "ablate");
  report["ablation"] = which;

  struct Cell {
    std::string label;
    std::map<std::string, std::string> overrides;
  };
  std::vector<Cell> cells;
  std::string value_column;

  if (which == "k-sweep") {
    value_column = "k";
    for (std::size_t k : ctx.config.get_size_list("ks", {10, 20, 50, 80}))
      cells.push_back({std::to_string(k), {{"k", std::to_string(k)}}});
  } else if (which == "p-sweep") {
    value_column = "p";
    for (const char* p : {"0.3", "0.5", "0.8", "1.0"})
      cells.push_back({p, {{"p", p}}});
  } else if (which == "kernel-size") {
    value_column = "kernel";
    cells.push_back({"1x1", {{"fb_kernel", "1"}}});
    cells.push_back({"3x3", {{"fb_kernel", "3"}}});
  } else if (which == "dropout-vs-dropfactor") {
    value_column = "method";
    cells.push_back({"baseline", {{"preset", "baseline"}}});
    cells.push_back({"fbn", {{"p", "1.0"}}});
    cells.push_back({"fbn+dropout", {{"p", "1.0"}, {"dropout_keep", "0.5"}}});
    cells.push_back({"fbn+dropfactor", {{"p", "0.5"}}});
    cells.push_back({"fbn+dropout+dropfactor", {{"p", "0.5"}, {"dropout_keep", "0.5"}}});
  } else {
    throw config_error("unknown ablation '" + which +
                       "' (want k-sweep | p-sweep | kernel-size | dropout-vs-dropfactor)");
  }

  const bool wants_images = which == "kernel-size" || which == "dropout-vs-dropfactor";

  json rows = json::array();
  bool truncated = false;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& cell : cells) {
    const double elapsed_min =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
    if (elapsed_min > cap_minutes) {
      truncated = true;
      break;
    }
    CommandContext cell_ctx = ctx;
    cell_ctx.out_dir.clear();
    if (wants_images && !cell_ctx.config.has("dataset"))
      cell_ctx.config.set("dataset", "synthetic-images");
    if (wants_images && !cell_ctx.config.has("image_size"))
      cell_ctx.config.set("image_size", "16");
    if (wants_images && !cell_ctx.config.has("epochs")) cell_ctx.config.set("epochs", "4");
    for (const auto& [kk, vv] : cell.overrides) cell_ctx.config.set(kk, vv);

    auto ds = resolve_dataset<double>(cell_ctx, nullptr);
    auto preset = resolve_preset<double>(cell_ctx, ds);
    auto settings = resolve_train_settings(cell_ctx);
    settings.augment = false;

    Rng init = Rng::stream(settings.seed, "init");
    auto net = nn::build_preset<double>(preset, init);
    const auto cell_start = std::chrono::steady_clock::now();
    auto outcome = nn::train_model(net, ds.train, ds.test, settings);
    const double cell_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - cell_start).count();

    rows.push_back({{value_column, cell.label},
                    {"train_err", outcome.history.empty() ? 1.0 : outcome.history.back().train_err},
                    {"test_err", outcome.final_test_err},
                    {"params", net.parameter_count()},
                    {"wall_seconds", cell_seconds}});
    (*ctx.log) << "ablate[" << which << "] " << cell.label
               << " test_err=" << outcome.final_test_err << "\n";
  }

  report["rows"] = rows;
  report["truncated"] = truncated;

  std::ostringstream table;
  table << value_column << "\ttrain_err\ttest_err\tparams\n";
  for (const auto& r : rows) {
    table << r[value_column].get<std::string>() << "\t" << r["train_err"].get<double>()
          << "\t" << r["test_err"].get<double>() << "\t"
          << r["params"].get<std::uint64_t>() << "\n";
  }
  if (truncated) table << "... TRUNCATED: wallclock cap reached before remaining rows ...\n";
  report["table_text"] = table.str();
  (*ctx.log) << table.str();

  detail::write_report(ctx, report);
  if (!ctx.out_dir.empty()) {
    std::ofstream os((fs::path(ctx.out_dir) / "table.txt").string());
    os << table.str();
  }
  return kPass;
}

}  // namespace fbk::commands
