#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fbk/errors.hpp"
#include "fbk/tensor.hpp"

namespace fbk::nn {

template <typename T>
struct LossResult {
  double loss = 0;       // mean cross-entropy over the batch
  double error = 0;      // top-1 error rate
  Tensor<T> d_logits;    // gradient of the summed (not averaged) loss
};

/// Softmax cross-entropy head. The reported loss is the batch mean; the
/// returned gradient belongs to the summed loss (softmax minus one-hot per
/// row), so learning rates are interpreted per batch.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t batch = logits.extent(0), c = logits.extent(1);
  if (labels.size() != batch) {
    throw dimension_error("loss: " + std::to_string(labels.size()) + " labels for batch " +
                          std::to_string(batch));
  }
  LossResult<T> r;
  r.d_logits = Tensor<T>({batch, c});
  double loss_sum = 0;
  std::size_t wrong = 0;
  for (std::size_t s = 0; s < batch; ++s) {
    const int label = labels[s];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw data_error("label " + std::to_string(label) + " out of range for " +
                       std::to_string(c) + " classes");
    }
    const T* z = logits.row(s);
    T zmax = z[0];
    std::size_t argmax = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (z[j] > zmax) {
        zmax = z[j];
        argmax = j;
      }
    }
    T sumexp = 0;
    for (std::size_t j = 0; j < c; ++j) sumexp += std::exp(z[j] - zmax);
    const T lse = zmax + std::log(sumexp);
    loss_sum += static_cast<double>(lse - z[label]);
    if (argmax != static_cast<std::size_t>(label)) ++wrong;
    T* d = r.d_logits.row(s);
    for (std::size_t j = 0; j < c; ++j) {
      d[j] = std::exp(z[j] - lse);
      if (j == static_cast<std::size_t>(label)) d[j] -= T(1);
    }
  }
  r.loss = loss_sum / static_cast<double>(batch);
  r.error = static_cast<double>(wrong) / static_cast<double>(batch);
  return r;
}

}  // namespace fbk::nn
