#include <gtest/gtest.h>

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "fbk/data/augment.hpp"
#include "fbk/data/cifar.hpp"
#include "fbk/data/dataset.hpp"
#include "fbk/data/synthetic.hpp"
#include "fbk/nn/presets.hpp"
#include "fbk/nn/train.hpp"
#include "test_util.hpp"

using namespace fbk;
using namespace fbk::data;
namespace fs = std::filesystem;

namespace {

// Hand-built single-record batch files in the 10-class binary layout.
std::string write_fixture_dir() {
  const std::string dir = (fs::temp_directory_path() / "fbk_cifar_fixture").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (int b = 1; b <= 5; ++b) {
    CifarRecord rec;
    rec.label = b % 10;
    rec.pixels.resize(3072);
    for (std::size_t i = 0; i < 3072; ++i)
      rec.pixels[i] = static_cast<std::uint8_t>((i + b) % 256);
    auto bytes = encode_cifar_record(rec, CifarVariant::cifar10);
    std::ofstream os(dir + "/data_batch_" + std::to_string(b) + ".bin", std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  }
  CifarRecord rec;
  rec.label = 7;
  rec.pixels.assign(3072, 128);
  auto bytes = encode_cifar_record(rec, CifarVariant::cifar10);
  std::ofstream os(dir + "/test_batch.bin", std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  return dir;
}

}  // namespace

TEST(Cifar, FixtureRecordDecodesToKnownValues) {
  const std::string dir = write_fixture_dir();
  auto [train, test] = load_cifar<double>(dir, CifarVariant::cifar10);
  EXPECT_EQ(train.size(), 5u);
  EXPECT_EQ(test.size(), 1u);
  EXPECT_EQ(train.class_count, 10);
  EXPECT_EQ(train.labels[0], 1);
  // record 1 wrote pixel[i] = (i + 1) % 256 scaled by 1/255
  EXPECT_DOUBLE_EQ(train.x[0], 1.0 / 255.0);
  EXPECT_DOUBLE_EQ(train.x[1], 2.0 / 255.0);
  EXPECT_DOUBLE_EQ(test.x[0], 128.0 / 255.0);
  EXPECT_EQ(test.labels[0], 7);
  fs::remove_all(dir);
}

TEST(Cifar, MissingFileNamesPathAndExpectedSize) {
  const std::string dir = (fs::temp_directory_path() / "fbk_cifar_nothere").string();
  fs::remove_all(dir);
  try {
    load_cifar<double>(dir, CifarVariant::cifar10);
    FAIL() << "expected io_error";
  } catch (const io_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("data_batch_1.bin"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3073"), std::string::npos) << msg;
  }
}

TEST(Cifar, TruncatedFileRejected) {
  const std::string dir = (fs::temp_directory_path() / "fbk_cifar_trunc").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (int b = 1; b <= 5; ++b) {
    std::ofstream os(dir + "/data_batch_" + std::to_string(b) + ".bin", std::ios::binary);
    std::vector<char> bytes(b == 3 ? 1000 : 3073, 1);  // batch 3 is truncated
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream os(dir + "/test_batch.bin", std::ios::binary);
  std::vector<char> bytes(3073, 1);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  os.close();
  EXPECT_THROW(load_cifar<double>(dir, CifarVariant::cifar10), io_error);
  fs::remove_all(dir);
}

TEST(Cifar, HundredClassLayoutUsesFineLabels) {
  const std::string dir = (fs::temp_directory_path() / "fbk_cifar100_fixture").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto write_records = [&](const std::string& name, std::vector<std::pair<int, int>> labels) {
    std::ofstream os(dir + "/" + name, std::ios::binary);
    for (auto [coarse, fine] : labels) {
      CifarRecord rec;
      rec.coarse_label = coarse;
      rec.label = fine;
      rec.pixels.assign(3072, 200);
      auto bytes = encode_cifar_record(rec, CifarVariant::cifar100);
      os.write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    }
  };
  write_records("train.bin", {{3, 42}, {7, 99}});
  write_records("test.bin", {{1, 0}});

  auto [train, test] = load_cifar<double>(dir, CifarVariant::cifar100);
  EXPECT_EQ(train.class_count, 100);
  EXPECT_EQ(train.size(), 2u);
  EXPECT_EQ(train.labels[0], 42);  // fine label, not the coarse one
  EXPECT_EQ(train.labels[1], 99);
  EXPECT_EQ(test.labels[0], 0);
  EXPECT_DOUBLE_EQ(train.x[0], 200.0 / 255.0);
  fs::remove_all(dir);
}

TEST(Cifar, DecodeEncodeRoundTripsExactBytes) {
  Rng rng(40);
  std::vector<std::uint8_t> raw(3074);
  for (auto& b : raw) b = static_cast<std::uint8_t>(rng.integer(256));
  auto rec = decode_cifar_record(raw.data(), CifarVariant::cifar100);
  auto back = encode_cifar_record(rec, CifarVariant::cifar100);
  EXPECT_EQ(back, raw);

  // decode to [0,1] floats, then re-quantize: bytes survive the round trip
  Tensor<double> img({1, 3, 32, 32});
  for (std::size_t i = 0; i < 3072; ++i) img[i] = rec.pixels[i] / 255.0;
  auto rec2 = encode_image(img, 0, rec.label);
  EXPECT_EQ(rec2.pixels, rec.pixels);
}

TEST(Cifar, WrittenFormatLoadsBack) {
  SyntheticImageSpec spec;
  spec.classes = 5;
  spec.train_samples = 25;
  spec.test_samples = 10;
  spec.size = 32;
  spec.seed = 41;
  auto [train, test] = gen_synthetic_images<double>(spec);
  const std::string dir = (fs::temp_directory_path() / "fbk_cifar_written").string();
  fs::remove_all(dir);
  write_cifar10_format(train, test, dir);
  auto [train2, test2] = load_cifar<double>(dir, CifarVariant::cifar10);
  EXPECT_EQ(train2.size(), 25u);
  EXPECT_EQ(test2.size(), 10u);
  EXPECT_EQ(train2.labels, train.labels);
  // quantization to bytes moves each value by at most half a step
  double max_diff = 0;
  for (std::size_t i = 0; i < train2.x.numel(); ++i)
    max_diff = std::max(max_diff, std::abs(train2.x[i] - train.x[i]));
  EXPECT_LE(max_diff, 0.5 / 255.0 + 1e-12);
  fs::remove_all(dir);
}

TEST(Cifar, TestSplitReusesTrainingStatistics) {
  const std::string dir = write_fixture_dir();
  auto [train, test] = load_cifar<double>(dir, CifarVariant::cifar10);
  ASSERT_EQ(train.channel_mean.size(), 3u);
  EXPECT_TRUE(test.stats_from_train);
  EXPECT_EQ(test.channel_mean, train.channel_mean);
  EXPECT_EQ(test.channel_std, train.channel_std);
  // the test split's own pixel mean differs from the stored statistics,
  // proving the stats were not recomputed from test data
  double own_mean = 0;
  for (std::size_t i = 0; i < 1024; ++i) own_mean += test.x[i];
  own_mean /= 1024.0;
  EXPECT_GT(std::abs(own_mean - test.channel_mean[0]), 1e-3);
  fs::remove_all(dir);
}

TEST(Synthetic, FixedSeedIsBitwiseReproducible) {
  SyntheticQuadraticSpec spec;
  spec.seed = 42;
  spec.train_samples = 100;
  spec.test_samples = 50;
  auto a = gen_synthetic<double>(spec);
  auto b = gen_synthetic<double>(spec);
  EXPECT_TRUE(a.train.x == b.train.x);
  EXPECT_EQ(a.train.labels, b.train.labels);
  EXPECT_TRUE(a.test.x == b.test.x);
}

TEST(Synthetic, RankZeroNoiseFreeIsLinearlySeparable) {
  SyntheticQuadraticSpec spec;
  spec.n = 16;
  spec.r = 0;
  spec.classes = 4;
  spec.train_samples = 1200;
  spec.test_samples = 300;
  spec.noise = 0;
  spec.seed = 43;
  auto gen = gen_synthetic<double>(spec);

  Rng init = Rng::stream(44, "init");
  nn::PresetSpec p;
  p.name = "linear";
  p.input_dim = 16;
  p.classes = 4;
  auto net = nn::build_preset<double>(p, init);
  nn::TrainSettings s;
  s.epochs = 60;
  s.batch_size = 64;
  s.lr = 0.02;
  s.weight_decay = 0;
  s.seed = 44;
  nn::train_model(net, gen.train, gen.test, s);
  const double train_err = nn::evaluate_error(net, gen.train, 256);
  EXPECT_LE(train_err, 0.01);
}

TEST(Synthetic, GeneratorParamsRetainedForAudit) {
  SyntheticQuadraticSpec spec;
  spec.n = 8;
  spec.r = 3;
  spec.classes = 5;
  spec.train_samples = 10;
  spec.test_samples = 5;
  auto gen = gen_synthetic<double>(spec);
  EXPECT_EQ(gen.linear_w.shape(), (Shape{5, 8}));
  EXPECT_EQ(gen.quad_f.shape(), (Shape{5, 3, 8}));
  EXPECT_EQ(gen.bias.shape(), (Shape{5}));
}

TEST(Augment, CenteredCropWithoutFlipIsIdentity) {
  Rng rng(45);
  auto batch = test::random_tensor<double>({2, 3, 8, 8}, rng);
  Tensor<double> out(batch.shape());
  fbk::data::detail::augment_one(batch, 0, kAugmentPad, kAugmentPad, false, out);
  fbk::data::detail::augment_one(batch, 1, kAugmentPad, kAugmentPad, false, out);
  EXPECT_EQ(test::max_abs_diff(out, batch), 0.0);
}

TEST(Augment, FlipTwiceIsIdentity) {
  Rng rng(46);
  auto batch = test::random_tensor<double>({2, 3, 8, 8}, rng);
  EXPECT_TRUE(hflip(hflip(batch)) == batch);
}

TEST(Augment, OutputValuesExistInPaddedInput) {
  Rng rng(47);
  // distinct strictly-positive values so membership is checkable per channel
  Tensor<double> batch({1, 2, 6, 6});
  for (std::size_t i = 0; i < batch.numel(); ++i) batch[i] = 1.0 + static_cast<double>(i);
  auto out = augment(batch, rng);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    std::map<double, int> input_counts;
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) ++input_counts[batch(0, ch, y, x)];
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        const double v = out(0, ch, y, x);
        if (v == 0.0) continue;  // padding
        auto it = input_counts.find(v);
        ASSERT_NE(it, input_counts.end()) << "value " << v << " not in source channel";
        EXPECT_GE(--it->second, 0);
      }
  }
}

TEST(Subset, ClassBalancedSamplingIsExact) {
  SyntheticImageSpec spec;
  spec.classes = 5;
  spec.train_samples = 100;
  spec.test_samples = 10;
  spec.size = 8;
  spec.seed = 48;
  auto [train, test] = gen_synthetic_images<double>(spec);
  Rng rng(49);
  auto subset = class_balanced_subset(train, 50, rng);
  EXPECT_EQ(subset.size(), 50u);
  std::vector<int> counts(5, 0);
  for (int l : subset.labels) ++counts[l];
  for (int c : counts) EXPECT_EQ(c, 10);
  EXPECT_TRUE(subset.stats_from_train);
}
