#include <gtest/gtest.h>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <vector>

#include "fbk/data/synthetic.hpp"
#include "fbk/nn/checkpoint.hpp"
#include "fbk/nn/network.hpp"
#include "fbk/nn/presets.hpp"
#include "fbk/nn/train.hpp"
#include "fbk/oracles.hpp"
#include "test_util.hpp"

using namespace fbk;
using namespace fbk::nn;
using test::random_tensor;

TEST(Sgd, ZeroGradientsLeaveParamsUntouched) {
  Tensor<double> w({3}, {1, 2, 3});
  Tensor<double> g({3});
  SgdState<double> state;
  std::vector<ParamRef<double>> refs = {{&w, &g, "w", true, false}};
  sgd_step(refs, state, 0.5, 0.9, 0.0);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[2], 3.0);
}

TEST(Sgd, PlainStepSubtractsLrTimesGrad) {
  Tensor<double> w({1}, {10.0});
  Tensor<double> g({1}, {2.0});
  SgdState<double> state;
  std::vector<ParamRef<double>> refs = {{&w, &g, "w", false, false}};
  sgd_step(refs, state, 1.0, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(w[0], 8.0);
}

TEST(Sgd, MomentumUnrollsOverTwoSteps) {
  const double lr = 0.1, grad = 3.0;
  Tensor<double> w({1}, {0.0});
  Tensor<double> g({1}, {grad});
  SgdState<double> state;
  std::vector<ParamRef<double>> refs = {{&w, &g, "w", false, false}};
  sgd_step(refs, state, lr, 0.9, 0.0);
  sgd_step(refs, state, lr, 0.9, 0.0);
  // v1 = g, v2 = 0.9 g + g; total = lr (g + 1.9 g)
  EXPECT_NEAR(w[0], -lr * (grad + 1.9 * grad), 1e-12);
}

TEST(Sgd, WeightDecayCouplesIntoVelocity) {
  Tensor<double> w({1}, {2.0});
  Tensor<double> g({1}, {0.0});
  SgdState<double> state;
  std::vector<ParamRef<double>> refs = {{&w, &g, "w", true, false}};
  sgd_step(refs, state, 1.0, 0.0, 0.1);
  EXPECT_NEAR(w[0], 2.0 - 0.1 * 2.0, 1e-12);
}

TEST(Sgd, NonFiniteGradientAbortsWithDiagnostic) {
  Tensor<double> w({2}, {1.0, 1.0});
  Tensor<double> g({2}, {0.0, std::nan("")});
  SgdState<double> state;
  std::vector<ParamRef<double>> refs = {{&w, &g, "spicy", true, false}};
  try {
    sgd_step(refs, state, 0.1, 0.9, 0.0);
    FAIL() << "expected data_error";
  } catch (const data_error& e) {
    EXPECT_NE(std::string(e.what()).find("spicy"), std::string::npos);
  }
}

TEST(Warmup, TenthAtEpochZeroLinearRampToOne) {
  EXPECT_DOUBLE_EQ(warmup_multiplier(0, 3), 0.1);
  EXPECT_DOUBLE_EQ(warmup_multiplier(1, 3), 0.4);
  EXPECT_DOUBLE_EQ(warmup_multiplier(2, 3), 0.7);
  EXPECT_DOUBLE_EQ(warmup_multiplier(3, 3), 1.0);
  EXPECT_DOUBLE_EQ(warmup_multiplier(7, 3), 1.0);
  EXPECT_DOUBLE_EQ(warmup_multiplier(0, 0), 1.0);
}

TEST(Schedule, StepDecayAppliesAtListedEpochs) {
  EXPECT_DOUBLE_EQ(epoch_lr(0.2, 0, {10, 15}, 0.1), 0.2);
  EXPECT_DOUBLE_EQ(epoch_lr(0.2, 10, {10, 15}, 0.1), 0.02);
  EXPECT_DOUBLE_EQ(epoch_lr(0.2, 17, {10, 15}, 0.1), 0.002);
}

TEST(Loss, LabelOutOfRangeRejected) {
  Tensor<double> logits({2, 3});
  EXPECT_THROW(softmax_cross_entropy(logits, {0, 3}), data_error);
  EXPECT_THROW(softmax_cross_entropy(logits, {-1, 0}), data_error);
}

TEST(ForwardBackward, UntrainedNetworkSitsAtChanceLoss) {
  Rng init = Rng::stream(42, "init");
  PresetSpec spec;
  spec.name = "fb-dense";
  spec.input_dim = 16;
  spec.classes = 7;
  spec.k = 4;
  spec.p = 0.5;
  auto net = build_preset<double>(spec, init);

  Rng rng(1);
  // inputs in [-1,1], the range FB layers see behind their tanh squashing
  auto x = random_tensor<double>({256, 16}, rng);
  std::vector<int> labels(256);
  for (auto& l : labels) l = static_cast<int>(rng.integer(7));
  auto step = forward_backward(net, x, labels, false);
  EXPECT_NEAR(step.loss, std::log(7.0), 0.1 * std::log(7.0));
}

TEST(ForwardBackward, LossDecreasesOnSeparableToySet) {
  // two linearly separable blobs
  Rng rng(2);
  const std::size_t n_samples = 64;
  Tensor<double> x({n_samples, 4});
  std::vector<int> labels(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const int cls = static_cast<int>(s % 2);
    labels[s] = cls;
    for (std::size_t i = 0; i < 4; ++i)
      x(s, i) = rng.gaussian() * 0.3 + (cls ? 1.5 : -1.5);
  }

  Rng init = Rng::stream(3, "init");
  PresetSpec spec;
  spec.name = "linear";
  spec.input_dim = 4;
  spec.classes = 2;
  auto net = build_preset<double>(spec, init);

  SgdState<double> opt;
  auto params = net.params();
  double first = 0, last = 0;
  Rng mask = Rng::stream(3, "mask");
  for (int step = 0; step < 50; ++step) {
    auto r = forward_backward(net, x, labels, true, &mask);
    if (step == 0) first = r.loss;
    last = r.loss;
    sgd_step(params, opt, 0.01, 0.9, 0.0);
  }
  EXPECT_LT(last, 0.5 * first);
}

TEST(ForwardBackward, EndToEndGradientMatchesFiniteDifferences) {
  // three-layer net with one FB layer in the middle
  Rng init = Rng::stream(4, "init");
  Network<double> net;
  net.add(std::make_unique<Linear<double>>(6, 5, init));
  net.add(std::make_unique<Tanh<double>>());
  net.add(std::make_unique<FbDense<double>>(5, 3, 2, 0.5, init));

  Rng rng(5);
  auto x = test::random_gaussian<double>({4, 6}, rng);
  std::vector<int> labels = {0, 2, 1, 1};

  Rng mask = Rng::stream(6, "mask");
  net.resample_masks(mask);  // freeze a training-mode mask for the whole check

  auto loss_of = [&]() {
    auto logits = net.forward(x, true);
    return softmax_cross_entropy(logits, labels).loss * 4.0;  // summed loss
  };

  forward_backward(net, x, labels, true);  // no mask rng: keep the frozen mask
  auto params = net.params();

  for (auto& ref : params) {
    for (std::size_t i = 0; i < ref.value->numel(); i += std::max<std::size_t>(1, ref.value->numel() / 7)) {
      const double saved = (*ref.value)[i];
      const double h = 1e-5;
      (*ref.value)[i] = saved + h;
      const double up = loss_of();
      (*ref.value)[i] = saved - h;
      const double down = loss_of();
      (*ref.value)[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double analytic = (*ref.grad)[i];
      EXPECT_LE(test::rel_err(analytic, fd, 1e-7), 1e-4) << ref.name << "[" << i << "]";
    }
  }
}

TEST(ForwardBackward, ConvTrunkGradientsMatchFiniteDifferences) {
  // conv + bn + pool trunk into a linear head, training mode
  Rng init = Rng::stream(7, "init");
  Network<double> net;
  net.add(std::make_unique<Conv2d<double>>(ConvGeometry{2, 3, 3, 3, 1, 1}, init));
  net.add(std::make_unique<BatchNorm<double>>(3));
  net.add(std::make_unique<ReLU<double>>());
  net.add(std::make_unique<MaxPool2d<double>>(2));
  net.add(std::make_unique<Flatten<double>>());
  net.add(std::make_unique<Linear<double>>(3 * 2 * 2, 2, init));

  Rng rng(8);
  auto x = test::random_gaussian<double>({3, 2, 4, 4}, rng);
  std::vector<int> labels = {0, 1, 0};

  auto loss_of = [&]() {
    auto logits = net.forward(x, true);
    return softmax_cross_entropy(logits, labels).loss * 3.0;
  };

  forward_backward(net, x, labels, true);
  auto params = net.params();
  for (auto& ref : params) {
    const std::size_t stride = std::max<std::size_t>(1, ref.value->numel() / 5);
    for (std::size_t i = 0; i < ref.value->numel(); i += stride) {
      const double saved = (*ref.value)[i];
      const double h = 1e-5;
      (*ref.value)[i] = saved + h;
      const double up = loss_of();
      (*ref.value)[i] = saved - h;
      const double down = loss_of();
      (*ref.value)[i] = saved;
      const double fd = (up - down) / (2 * h);
      EXPECT_LE(test::rel_err((*ref.grad)[i], fd, 1e-6), 1e-4) << ref.name << "[" << i << "]";
    }
  }
}

TEST(Presets, BaselineAndFbnDifferOnlyInHead) {
  Rng a = Rng::stream(9, "init");
  Rng b = Rng::stream(9, "init");
  PresetSpec spec;
  spec.name = "baseline";
  spec.classes = 10;
  auto baseline = build_preset<double>(spec, a);
  spec.name = "conv-fbn";
  auto fbn = build_preset<double>(spec, b);

  // identical trunks: 3 blocks = 12 layers
  const std::size_t trunk = 12;
  ASSERT_GE(baseline.size(), trunk);
  ASSERT_GE(fbn.size(), trunk);
  for (std::size_t i = 0; i < trunk; ++i)
    EXPECT_EQ(baseline.layer(i).describe(), fbn.layer(i).describe());

  EXPECT_EQ(baseline.layer(trunk).describe(), "global-avgpool");
  EXPECT_EQ(baseline.layer(trunk + 1).describe(), "linear 32->10");
  EXPECT_EQ(fbn.layer(trunk).describe(), "tanh");
  EXPECT_NE(fbn.layer(trunk + 1).describe().find("fb-conv 1x1 32->10 k=20"), std::string::npos);
  EXPECT_EQ(fbn.layer(trunk + 2).describe(), "global-avgpool");
}

TEST(Presets, FbnWithZeroFactorsMatchesBaselineParamCount) {
  Rng a = Rng::stream(10, "init");
  Rng b = Rng::stream(10, "init");
  PresetSpec spec;
  spec.name = "baseline";
  spec.classes = 10;
  auto baseline = build_preset<double>(spec, a);
  spec.name = "conv-fbn";
  spec.k = 0;
  spec.p = 0.5;
  auto fbn0 = build_preset<double>(spec, b);
  EXPECT_EQ(baseline.parameter_count(), fbn0.parameter_count());
}

TEST(Presets, FactorBudgetAddsExactlyCkN) {
  Rng a = Rng::stream(11, "init");
  Rng b = Rng::stream(11, "init");
  PresetSpec spec;
  spec.name = "conv-fbn";
  spec.classes = 10;
  spec.k = 0;
  auto fbn0 = build_preset<double>(spec, a);
  spec.k = 20;
  auto fbn20 = build_preset<double>(spec, b);
  // head input is 32 channels through a 1x1 kernel: n = 32
  EXPECT_EQ(fbn20.parameter_count() - fbn0.parameter_count(), 10ull * 20ull * 32ull);
}

TEST(Presets, UnknownNameRejected) {
  Rng rng(12);
  PresetSpec spec;
  spec.name = "resnet-9000";
  EXPECT_THROW(build_preset<double>(spec, rng), config_error);
}

TEST(FbLayers, TrainingForwardWithRetainOneEqualsInference) {
  Rng init = Rng::stream(13, "init");
  FbDense<double> layer(8, 4, 5, 1.0, init);
  Rng rng(14);
  auto x = test::random_gaussian<double>({3, 8}, rng);
  auto train_y = layer.forward(x, true);
  auto eval_y = layer.forward(x, false);
  EXPECT_EQ(test::max_abs_diff(train_y, eval_y), 0.0);
}

TEST(FbLayers, BoundedInputContractEnforcedWhenEnabled) {
  Rng init = Rng::stream(15, "init");
  FbDense<double> layer(4, 2, 3, 0.5, init);
  layer.set_bounded_input_check(true);
  Tensor<double> ok({1, 4}, {0.5, -0.9, 1.0, 0.0});
  EXPECT_NO_THROW(layer.forward(ok, false));
  Tensor<double> bad({1, 4}, {0.5, -1.5, 0.2, 0.0});
  EXPECT_THROW(layer.forward(bad, false), contract_error);
}

TEST(FbLayers, InvertedVariantScalesAtTrainTimeOnly) {
  Rng init = Rng::stream(16, "init");
  const double p = 0.5;
  FbDense<double> classic(6, 2, 4, p, init);
  Rng init2 = Rng::stream(16, "init");
  FbDense<double> inverted(6, 2, 4, p, init2, -1, true);

  Rng rng(17);
  auto x = test::random_gaussian<double>({2, 6}, rng);
  // inference: classic scales the quadratic term by p, inverted leaves it be
  auto y_classic = classic.forward(x, false);
  auto y_inverted = inverted.forward(x, false);
  // recover the linear part via a zero-factor twin
  Rng init3 = Rng::stream(16, "init");
  FbDense<double> twin(6, 2, 4, p, init3);
  auto& tp = twin.fb_params();
  tp.factors.fill(0.0);
  auto y_linear = twin.forward(x, false);
  for (std::size_t i = 0; i < y_classic.numel(); ++i) {
    const double quad_classic = y_classic[i] - y_linear[i];
    const double quad_inverted = y_inverted[i] - y_linear[i];
    EXPECT_NEAR(quad_inverted * p, quad_classic, 1e-12);
  }
}

namespace {

data::Dataset<double> toy_vectors(std::size_t count, std::size_t dim, int classes,
                                  std::uint64_t seed) {
  data::SyntheticQuadraticSpec spec;
  spec.n = dim;
  spec.r = 2;
  spec.classes = classes;
  spec.train_samples = count;
  spec.test_samples = count / 4;
  spec.seed = seed;
  auto gen = data::gen_synthetic<double>(spec);
  return gen.train;
}

}  // namespace

TEST(Training, FixedSeedGivesBitIdenticalTrajectory) {
  auto ds = toy_vectors(256, 8, 3, 21);
  auto run = [&](std::uint64_t seed) {
    Rng init = Rng::stream(seed, "init");
    PresetSpec spec;
    spec.name = "fb-dense";
    spec.input_dim = 8;
    spec.classes = 3;
    spec.k = 3;
    spec.p = 0.5;
    auto net = build_preset<double>(spec, init);
    TrainSettings s;
    s.epochs = 4;
    s.batch_size = 32;
    s.lr = 0.05;
    s.seed = seed;
    return train_model(net, ds, ds, s);
  };
  auto a = run(77);
  auto b = run(77);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.history[e].train_err, b.history[e].train_err);
    EXPECT_EQ(a.history[e].test_err, b.history[e].test_err);
  }
}

TEST(Training, ZeroFactorFbPresetReproducesLinearTrajectoryBitwise) {
  auto ds = toy_vectors(256, 8, 3, 22);
  TrainSettings s;
  s.epochs = 5;
  s.batch_size = 32;
  s.lr = 0.05;
  s.seed = 99;

  Rng init_a = Rng::stream(99, "init");
  PresetSpec lin;
  lin.name = "linear";
  lin.input_dim = 8;
  lin.classes = 3;
  auto linear_net = build_preset<double>(lin, init_a);
  auto linear_run = train_model(linear_net, ds, ds, s);

  Rng init_b = Rng::stream(99, "init");
  PresetSpec fb;
  fb.name = "fb-dense";
  fb.input_dim = 8;
  fb.classes = 3;
  fb.k = 0;
  fb.p = 0.5;
  auto fb_net = build_preset<double>(fb, init_b);
  auto fb_run = train_model(fb_net, ds, ds, s);

  ASSERT_EQ(linear_run.history.size(), fb_run.history.size());
  for (std::size_t e = 0; e < linear_run.history.size(); ++e) {
    EXPECT_EQ(linear_run.history[e].train_loss, fb_run.history[e].train_loss);
    EXPECT_EQ(linear_run.history[e].test_err, fb_run.history[e].test_err);
  }
}

TEST(Training, UntrainedModelEvaluatesNearChance) {
  data::SyntheticQuadraticSpec spec;
  spec.n = 16;
  spec.r = 0;
  spec.classes = 10;
  spec.train_samples = 64;
  spec.test_samples = 4000;
  spec.seed = 23;
  auto gen = data::gen_synthetic<double>(spec);

  Rng init = Rng::stream(24, "init");
  PresetSpec p;
  p.name = "linear";
  p.input_dim = 16;
  p.classes = 10;
  auto net = build_preset<double>(p, init);
  const double err = evaluate_error(net, gen.test, 512);
  EXPECT_NEAR(err, 0.9, 0.03);
}

TEST(Training, ThreadedEvaluationMatchesSingleThread) {
  auto ds = toy_vectors(512, 8, 3, 25);
  Rng init = Rng::stream(26, "init");
  PresetSpec p;
  p.name = "fb-dense";
  p.input_dim = 8;
  p.classes = 3;
  p.k = 2;
  auto net = build_preset<double>(p, init);
  const double err1 = evaluate_error(net, ds, 64, 1);
  const double err2 = evaluate_error(net, ds, 64, 2);
  const double err3 = evaluate_error(net, ds, 64, 3);
  EXPECT_EQ(err1, err2);
  EXPECT_EQ(err1, err3);
}

TEST(Checkpoint, ResumeReproducesUninterruptedRunBitwise) {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "fbk_ckpt_test").string();
  fs::remove_all(dir);

  auto ds = toy_vectors(192, 8, 3, 27);
  TrainSettings s;
  s.epochs = 6;
  s.batch_size = 32;
  s.lr = 0.05;
  s.seed = 31;

  auto make_net = [&]() {
    Rng init = Rng::stream(31, "init");
    PresetSpec p;
    p.name = "fb-dense";
    p.input_dim = 8;
    p.classes = 3;
    p.k = 3;
    p.p = 0.5;
    return build_preset<double>(p, init);
  };

  // uninterrupted run
  auto net_full = make_net();
  auto full = train_model(net_full, ds, ds, s);

  // run the first 3 epochs, checkpoint, then resume the remaining 3
  auto net_a = make_net();
  SgdState<double> opt_a;
  Rng data_rng = Rng::stream(31, "data"), mask_rng = Rng::stream(31, "mask"),
      aug_rng = Rng::stream(31, "augment");
  TrainSettings first_half = s;
  first_half.epochs = 3;
  train_model(net_a, ds, ds, first_half, {}, &opt_a, 0, &data_rng, &mask_rng, &aug_rng);
  RngStates states{data_rng.save_state(), mask_rng.save_state(), aug_rng.save_state()};
  save_checkpoint(dir, net_a, opt_a, 3, states);

  auto net_b = make_net();
  SgdState<double> opt_b;
  RngStates loaded;
  const std::size_t resume_epoch = load_checkpoint(dir, net_b, opt_b, loaded);
  EXPECT_EQ(resume_epoch, 3u);
  Rng data2(0), mask2(0), aug2(0);
  data2.load_state(loaded.data);
  mask2.load_state(loaded.mask);
  aug2.load_state(loaded.augment);
  auto resumed =
      train_model(net_b, ds, ds, s, {}, &opt_b, resume_epoch, &data2, &mask2, &aug2);

  ASSERT_EQ(resumed.history.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(resumed.history[e].train_loss, full.history[e + 3].train_loss);
    EXPECT_EQ(resumed.history[e].train_err, full.history[e + 3].train_err);
    EXPECT_EQ(resumed.history[e].test_err, full.history[e + 3].test_err);
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, MismatchedNetworkRejected) {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "fbk_ckpt_mismatch").string();
  fs::remove_all(dir);

  Rng init = Rng::stream(32, "init");
  PresetSpec p;
  p.name = "fb-dense";
  p.input_dim = 8;
  p.classes = 3;
  p.k = 3;
  auto net = build_preset<double>(p, init);
  SgdState<double> opt;
  save_checkpoint(dir, net, opt, 1, RngStates{"", "", ""});

  Rng init2 = Rng::stream(32, "init");
  p.k = 5;
  auto other = build_preset<double>(p, init2);
  SgdState<double> opt2;
  RngStates states;
  EXPECT_THROW(load_checkpoint(dir, other, opt2, states), config_error);
  fs::remove_all(dir);
}

TEST(Checkpoint, ConvFbnManifestCarriesGeometry) {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "fbk_ckpt_convfbn").string();
  fs::remove_all(dir);

  Rng init = Rng::stream(35, "init");
  PresetSpec p;
  p.name = "conv-fbn";
  p.classes = 4;
  p.in_h = 16;
  p.in_w = 16;
  p.k = 3;
  auto net = build_preset<double>(p, init);
  SgdState<double> opt;
  save_checkpoint(dir, net, opt, 0, RngStates{"", "", ""});

  std::ifstream is((fs::path(dir) / "manifest.json").string());
  nlohmann::json manifest;
  is >> manifest;
  bool found = false;
  for (const auto& layer : manifest["layers"]) {
    if (layer["type"] == "fb-conv") {
      found = true;
      EXPECT_EQ(layer["k"], 3);
      EXPECT_EQ(layer["geometry"]["kernel_h"], 1);
      EXPECT_EQ(layer["geometry"]["in_channels"], 32);
      EXPECT_EQ(layer["geometry"]["out_channels"], 4);
    }
  }
  EXPECT_TRUE(found);

  // round trip into a structurally identical network
  Rng init2 = Rng::stream(36, "init");
  auto other = build_preset<double>(p, init2);
  SgdState<double> opt2;
  RngStates states;
  EXPECT_EQ(load_checkpoint(dir, other, opt2, states), 0u);
  fs::remove_all(dir);
}

TEST(Checkpoint, FbParamsSidecarNamesLayerAndDims) {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "fbk_params_dump").string();
  fs::remove_all(dir);
  Rng rng(33);
  auto params = init_fb_params<double>(3, 7, 2, rng);
  save_fb_params(dir, params, 0.5);
  std::ifstream is((fs::path(dir) / "manifest.json").string());
  ASSERT_TRUE(is.good());
  nlohmann::json j;
  is >> j;
  EXPECT_EQ(j["layer"], "fb-dense");
  EXPECT_EQ(j["c"], 3);
  EXPECT_EQ(j["n"], 7);
  EXPECT_EQ(j["k"], 2);
  EXPECT_DOUBLE_EQ(j["p"].get<double>(), 0.5);
  auto w = load_tensor<double>((fs::path(dir) / "weight.fbkt").string());
  EXPECT_TRUE(w == params.weight);
  fs::remove_all(dir);
}
