#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fbk/data/dataset.hpp"
#include "fbk/errors.hpp"
#include "fbk/tensor.hpp"

namespace fbk::data {

enum class CifarVariant { cifar10, cifar100 };

/// One raw record of the binary format: label byte(s) followed by
/// 3072 pixel bytes (channel-major, 32x32 each).
struct CifarRecord {
  int label = 0;
  int coarse_label = 0;  // cifar100 only
  std::vector<std::uint8_t> pixels;  // 3072 bytes
};

inline std::size_t cifar_record_bytes(CifarVariant v) {
  return (v == CifarVariant::cifar10 ? 1 : 2) + 3072;
}

inline CifarRecord decode_cifar_record(const std::uint8_t* bytes, CifarVariant v) {
  CifarRecord r;
  if (v == CifarVariant::cifar10) {
    r.label = bytes[0];
    r.pixels.assign(bytes + 1, bytes + 1 + 3072);
  } else {
    r.coarse_label = bytes[0];
    r.label = bytes[1];  // fine label
    r.pixels.assign(bytes + 2, bytes + 2 + 3072);
  }
  return r;
}

inline std::vector<std::uint8_t> encode_cifar_record(const CifarRecord& r, CifarVariant v) {
  std::vector<std::uint8_t> out;
  out.reserve(cifar_record_bytes(v));
  if (v == CifarVariant::cifar100) out.push_back(static_cast<std::uint8_t>(r.coarse_label));
  out.push_back(static_cast<std::uint8_t>(r.label));
  out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  return out;
}

/// Quantizes a [0,1] image row back to pixel bytes. Decoding divides by 255,
/// so decode -> encode reproduces the original bytes exactly.
template <typename T>
CifarRecord encode_image(const Tensor<T>& images, std::size_t index, int label) {
  CifarRecord r;
  r.label = label;
  const std::size_t row = images.numel() / images.extent(0);
  const T* src = images.data() + index * row;
  r.pixels.resize(row);
  for (std::size_t i = 0; i < row; ++i)
    r.pixels[i] = static_cast<std::uint8_t>(std::lround(static_cast<double>(src[i]) * 255.0));
  return r;
}

namespace detail {

/// Record count of one file; rejects missing or truncated files. The
/// standard full-size splits hold 10000 records per file.
inline std::size_t cifar_file_records(const std::string& path, CifarVariant v) {
  const std::size_t rec = cifar_record_bytes(v);
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is)
    throw io_error("missing dataset file " + path + " (expected " + std::to_string(rec) +
                   "-byte records, 10000 per standard batch = " + std::to_string(rec * 10000) +
                   " bytes)");
  const std::size_t actual = static_cast<std::size_t>(is.tellg());
  if (actual == 0 || actual % rec != 0)
    throw io_error("dataset file " + path + " holds " + std::to_string(actual) +
                   " bytes, expected a positive multiple of the " + std::to_string(rec) +
                   "-byte record size");
  return actual / rec;
}

template <typename T>
void append_file(Dataset<T>& d, const std::string& path, CifarVariant v,
                 std::size_t records) {
  const std::size_t rec = cifar_record_bytes(v);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("missing dataset file " + path);
  std::vector<std::uint8_t> buf(records * rec);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw io_error("dataset file " + path + " truncated while reading");

  const std::size_t start = d.labels.size();
  for (std::size_t i = 0; i < records; ++i) {
    auto record = decode_cifar_record(buf.data() + i * rec, v);
    d.labels.push_back(record.label);
    T* dst = d.x.data() + (start + i) * 3072;
    for (std::size_t p = 0; p < 3072; ++p)
      dst[p] = static_cast<T>(record.pixels[p]) / T(255);
  }
}

}  // namespace detail

/// Loads the standard binary layout from `dir`: five train batches plus one
/// test batch for the 10-class set, train.bin/test.bin for the 100-class
/// set. Pixels land in [0,1]; per-channel statistics come from the training
/// split and are copied onto the test split.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> load_cifar(const std::string& dir, CifarVariant v) {
  namespace fs = std::filesystem;
  std::pair<Dataset<T>, Dataset<T>> out;
  auto& [train, test] = out;

  std::vector<std::string> train_files, test_files;
  if (v == CifarVariant::cifar10) {
    for (int i = 1; i <= 5; ++i)
      train_files.push_back((fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string());
    test_files.push_back((fs::path(dir) / "test_batch.bin").string());
    train.class_count = test.class_count = 10;
  } else {
    train_files.push_back((fs::path(dir) / "train.bin").string());
    test_files.push_back((fs::path(dir) / "test.bin").string());
    train.class_count = test.class_count = 100;
  }

  std::size_t train_n = 0, test_n = 0;
  std::vector<std::size_t> train_counts, test_counts;
  for (auto& p : train_files) {
    train_counts.push_back(detail::cifar_file_records(p, v));
    train_n += train_counts.back();
  }
  for (auto& p : test_files) {
    test_counts.push_back(detail::cifar_file_records(p, v));
    test_n += test_counts.back();
  }
  train.x = Tensor<T>({train_n, 3, 32, 32});
  test.x = Tensor<T>({test_n, 3, 32, 32});

  for (std::size_t i = 0; i < train_files.size(); ++i)
    detail::append_file(train, train_files[i], v, train_counts[i]);
  for (std::size_t i = 0; i < test_files.size(); ++i)
    detail::append_file(test, test_files[i], v, test_counts[i]);

  compute_channel_stats(train);
  test.channel_mean = train.channel_mean;
  test.channel_std = train.channel_std;
  test.stats_from_train = true;

  train.validate();
  test.validate();
  return out;
}

/// Writes an image dataset in the 10-class binary layout (train batches plus
/// test batch). Used by fixtures and by synthetic image sets standing in for
/// the real files.
template <typename T>
void write_cifar10_format(const Dataset<T>& train, const Dataset<T>& test,
                          const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::size_t per_batch = (train.size() + 4) / 5;
  std::size_t idx = 0;
  for (int b = 1; b <= 5; ++b) {
    std::ofstream os((fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin")).string(),
                     std::ios::binary);
    for (std::size_t i = 0; i < per_batch && idx < train.size(); ++i, ++idx) {
      auto rec = encode_image(train.x, idx, train.labels[idx]);
      auto bytes = encode_cifar_record(rec, CifarVariant::cifar10);
      os.write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    }
  }
  std::ofstream os((fs::path(dir) / "test_batch.bin").string(), std::ios::binary);
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto rec = encode_image(test.x, i, test.labels[i]);
    auto bytes = encode_cifar_record(rec, CifarVariant::cifar10);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  }
}

}  // namespace fbk::data
