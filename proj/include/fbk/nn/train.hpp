#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fbk/data/augment.hpp"
#include "fbk/data/dataset.hpp"
#include "fbk/nn/network.hpp"
#include "fbk/nn/optimizer.hpp"
#include "fbk/nn/schedule.hpp"
#include "fbk/rng.hpp"

namespace fbk::nn {

struct TrainSettings {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_decay_factor = 0.1;
  std::vector<std::size_t> lr_decay_epochs;
  std::size_t warmup_epochs = 0;  // slow-start ramp for FB layers
  std::uint64_t seed = 1;
  bool augment = false;
  std::size_t eval_batch = 256;
  std::size_t threads = 1;  // evaluation fan-out; training is single-threaded
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_err = 0;
  double test_err = 0;
  double wall_seconds = 0;
};

struct TrainOutcome {
  std::vector<EpochMetrics> history;
  double final_test_err = 1.0;
};

namespace detail {

template <typename T>
void normalize_channels(Tensor<T>& batch, const data::Dataset<T>& d) {
  if (d.channel_mean.empty()) return;
  const std::size_t n = batch.extent(0), c = batch.extent(1),
                    hw = batch.extent(2) * batch.extent(3);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* base = batch.data() + (s * c + ch) * hw;
      const T mean = d.channel_mean[ch], inv = T(1) / d.channel_std[ch];
      for (std::size_t i = 0; i < hw; ++i) base[i] = (base[i] - mean) * inv;
    }
}

template <typename T>
std::pair<Tensor<T>, std::vector<int>> gather(const data::Dataset<T>& d,
                                              const std::vector<std::size_t>& order,
                                              std::size_t begin, std::size_t end) {
  Shape shape = d.x.shape();
  shape[0] = end - begin;
  Tensor<T> batch(shape);
  std::vector<int> labels(end - begin);
  const std::size_t row = d.x.numel() / d.x.extent(0);
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t src = order[i];
    std::copy(d.x.data() + src * row, d.x.data() + (src + 1) * row,
              batch.data() + (i - begin) * row);
    labels[i - begin] = d.labels[src];
  }
  return {std::move(batch), std::move(labels)};
}

}  // namespace detail

/// Top-1 error over a dataset in inference mode. With threads > 1 the test
/// set is split into contiguous chunks evaluated on clones of the network;
/// per-chunk error counts are integers summed in chunk order, so the result
/// does not depend on the thread count.
template <typename T>
double evaluate_error(Network<T>& net, const data::Dataset<T>& d, std::size_t batch_size,
                      std::size_t threads = 1) {
  if (d.size() == 0) return 0.0;
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);

  auto count_range = [&](Network<T>& model, std::size_t begin, std::size_t end) {
    std::size_t wrong = 0;
    for (std::size_t at = begin; at < end; at += batch_size) {
      const std::size_t stop = std::min(end, at + batch_size);
      auto [batch, labels] = detail::gather(d, order, at, stop);
      if (d.is_image()) detail::normalize_channels(batch, d);
      Tensor<T> logits = model.forward(batch, false);
      for (std::size_t s = 0; s < labels.size(); ++s) {
        const T* z = logits.row(s);
        std::size_t argmax = 0;
        for (std::size_t j = 1; j < logits.extent(1); ++j)
          if (z[j] > z[argmax]) argmax = j;
        if (argmax != static_cast<std::size_t>(labels[s])) ++wrong;
      }
    }
    return wrong;
  };

  std::size_t wrong = 0;
  if (threads <= 1) {
    wrong = count_range(net, 0, d.size());
  } else {
    const std::size_t chunk = (d.size() + threads - 1) / threads;
    std::vector<std::size_t> counts(threads, 0);
    std::vector<Network<T>> clones;
    clones.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) clones.push_back(net);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(d.size(), t * chunk);
      const std::size_t end = std::min(d.size(), begin + chunk);
      pool.emplace_back(
          [&, t, begin, end] { counts[t] = count_range(clones[t], begin, end); });
    }
    for (auto& th : pool) th.join();
    for (std::size_t t = 0; t < threads; ++t) wrong += counts[t];
  }
  return static_cast<double>(wrong) / static_cast<double>(d.size());
}

/// SGD training loop. All randomness flows from named substreams of the
/// settings seed (data order, DropFactor masks, augmentation), so a fixed
/// seed yields a bit-identical trajectory in single-threaded mode. The
/// checkpoint hooks receive the state after each epoch.
template <typename T>
TrainOutcome train_model(
    Network<T>& net, const data::Dataset<T>& train, const data::Dataset<T>& test,
    const TrainSettings& s, const std::function<void(const EpochMetrics&)>& on_epoch = {},
    SgdState<T>* opt_state = nullptr, std::size_t start_epoch = 0,
    Rng* data_rng_io = nullptr, Rng* mask_rng_io = nullptr, Rng* aug_rng_io = nullptr,
    const std::function<void(std::size_t /*next_epoch*/)>& after_epoch = {}) {
  Rng local_data = Rng::stream(s.seed, "data");
  Rng local_mask = Rng::stream(s.seed, "mask");
  Rng local_aug = Rng::stream(s.seed, "augment");
  Rng& data_rng = data_rng_io ? *data_rng_io : local_data;
  Rng& mask_rng = mask_rng_io ? *mask_rng_io : local_mask;
  Rng& aug_rng = aug_rng_io ? *aug_rng_io : local_aug;

  SgdState<T> local_state;
  SgdState<T>& opt = opt_state ? *opt_state : local_state;
  auto params = net.params();

  TrainOutcome outcome;
  for (std::size_t epoch = start_epoch; epoch < s.epochs; ++epoch) {
    const auto wall_start = std::chrono::steady_clock::now();
    const double lr = epoch_lr(s.lr, epoch, s.lr_decay_epochs, s.lr_decay_factor);
    const double fb_scale = warmup_multiplier(epoch, s.warmup_epochs);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    data_rng.shuffle(order);

    double loss_sum = 0, err_sum = 0;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < train.size(); at += s.batch_size) {
      const std::size_t stop = std::min(train.size(), at + s.batch_size);
      auto [batch, labels] = detail::gather(train, order, at, stop);
      if (train.is_image()) {
        if (s.augment) batch = data::augment(batch, aug_rng);
        detail::normalize_channels(batch, train);
      }
      auto step = forward_backward(net, batch, labels, true, &mask_rng);
      const std::function<double(const ParamRef<T>&)> scale =
          [&](const ParamRef<T>& p) { return p.fb_scope ? fb_scale : 1.0; };
      sgd_step(params, opt, lr, s.momentum, s.weight_decay, scale);
      const double weight = static_cast<double>(labels.size());
      loss_sum += step.loss * weight;
      err_sum += step.error * weight;
      seen += labels.size();
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_err = err_sum / static_cast<double>(seen);
    m.test_err = evaluate_error(net, test, s.eval_batch, s.threads);
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    outcome.history.push_back(m);
    outcome.final_test_err = m.test_err;
    if (on_epoch) on_epoch(m);
    if (after_epoch) after_epoch(epoch + 1);
  }
  return outcome;
}

}  // namespace fbk::nn
