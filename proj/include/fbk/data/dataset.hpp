#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fbk/errors.hpp"
#include "fbk/rng.hpp"
#include "fbk/tensor.hpp"

namespace fbk::data {

/// Labeled examples: features are [N, n] vectors or [N, C, H, W] images.
/// Image sets carry per-channel normalization statistics computed from the
/// training split; the same statistics travel with the matching test split
/// so evaluation never re-estimates them.
template <typename T>
struct Dataset {
  Tensor<T> x;
  std::vector<int> labels;
  int class_count = 0;

  std::vector<T> channel_mean, channel_std;
  bool stats_from_train = false;

  std::size_t size() const { return labels.size(); }
  bool is_image() const { return x.rank() == 4; }

  void validate() const {
    if (x.rank() != 2 && x.rank() != 4)
      throw data_error("dataset features must be rank 2 or 4, got " + shape_str(x.shape()));
    if (x.extent(0) != labels.size())
      throw data_error("dataset has " + std::to_string(x.extent(0)) + " rows but " +
                       std::to_string(labels.size()) + " labels");
    for (int l : labels)
      if (l < 0 || l >= class_count)
        throw data_error("label " + std::to_string(l) + " outside [0, " +
                         std::to_string(class_count) + ")");
  }
};

/// Per-channel mean / stddev over an image set.
template <typename T>
void compute_channel_stats(Dataset<T>& d) {
  const std::size_t n = d.x.extent(0), c = d.x.extent(1), hw = d.x.extent(2) * d.x.extent(3);
  d.channel_mean.assign(c, T(0));
  d.channel_std.assign(c, T(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0, sumsq = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const T* base = d.x.data() + (s * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum += base[i];
        sumsq += static_cast<double>(base[i]) * base[i];
      }
    }
    const double count = static_cast<double>(n * hw);
    const double mean = sum / count;
    const double var = sumsq / count - mean * mean;
    d.channel_mean[ch] = static_cast<T>(mean);
    d.channel_std[ch] = static_cast<T>(std::sqrt(var > 0 ? var : 0) + 1e-8);
  }
  d.stats_from_train = true;
}

/// Draws a class-balanced subset: total/class_count examples per class,
/// sampled without replacement.
template <typename T>
Dataset<T> class_balanced_subset(const Dataset<T>& d, std::size_t total, Rng& rng) {
  const std::size_t per_class = total / static_cast<std::size_t>(d.class_count);
  std::vector<std::vector<std::size_t>> by_class(d.class_count);
  for (std::size_t i = 0; i < d.labels.size(); ++i) by_class[d.labels[i]].push_back(i);

  std::vector<std::size_t> picked;
  for (auto& pool : by_class) {
    if (pool.size() < per_class)
      throw data_error("class-balanced subset wants " + std::to_string(per_class) +
                       " per class, a class has only " + std::to_string(pool.size()));
    rng.shuffle(pool);
    picked.insert(picked.end(), pool.begin(), pool.begin() + per_class);
  }

  Dataset<T> out;
  out.class_count = d.class_count;
  out.channel_mean = d.channel_mean;
  out.channel_std = d.channel_std;
  out.stats_from_train = d.stats_from_train;
  Shape shape = d.x.shape();
  shape[0] = picked.size();
  out.x = Tensor<T>(shape);
  const std::size_t row = d.x.numel() / d.x.extent(0);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const T* src = d.x.data() + picked[i] * row;
    std::copy(src, src + row, out.x.data() + i * row);
    out.labels.push_back(d.labels[picked[i]]);
  }
  return out;
}

}  // namespace fbk::data
