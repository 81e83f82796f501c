#pragma once

#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fbk/nn/layers.hpp"
#include "fbk/nn/loss.hpp"
#include "fbk/rng.hpp"
#include "fbk/tensor.hpp"

namespace fbk::nn {

/// Ordered layer stack with a softmax cross-entropy head.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  Network(const Network& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& other) {
    if (this != &other) {
      layers_.clear();
      for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    return *this;
  }

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> cur = x;
    for (auto& l : layers_) cur = l->forward(cur, training);
    return cur;
  }

  Tensor<T> backward(const Tensor<T>& d_logits) {
    Tensor<T> cur = d_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto ref : layers_[i]->params()) {
        std::ostringstream os;
        os << "L" << i << "." << ref.name << " (" << layers_[i]->describe() << ")";
        ref.name = os.str();
        out.push_back(ref);
      }
    }
    return out;
  }

  std::uint64_t parameter_count() {
    std::uint64_t total = 0;
    for (auto& ref : params()) total += ref.value->numel();
    return total;
  }

  void resample_masks(Rng& rng) {
    for (auto& l : layers_) l->resample_mask(rng);
  }

  bool has_fb_layer() const {
    for (const auto& l : layers_)
      if (l->is_fb()) return true;
    return false;
  }

  std::string describe() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (i) os << "\n";
      os << layers_[i]->describe();
    }
    return os.str();
  }

  /// All tensors a checkpoint must carry: parameters plus layer extra state,
  /// with stable names keyed by layer index.
  std::vector<std::pair<std::string, Tensor<T>*>> named_state() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto ref : layers_[i]->params())
        out.emplace_back("layer" + std::to_string(i) + "." + ref.name, ref.value);
      for (auto [name, tensor] : layers_[i]->extra_state())
        out.emplace_back("layer" + std::to_string(i) + "." + name, tensor);
    }
    return out;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <typename T>
struct StepResult {
  double loss = 0;
  double error = 0;
};

/// One optimization-ready pass: optionally resamples every DropFactor (and
/// dropout) mask, runs the forward in the requested mode, evaluates the
/// softmax cross-entropy head, and backpropagates when training. Gradients
/// land in the layers' parameter buffers.
template <typename T>
StepResult<T> forward_backward(Network<T>& net, const Tensor<T>& batch,
                               const std::vector<int>& labels, bool training,
                               Rng* mask_rng = nullptr) {
  if (training && mask_rng) net.resample_masks(*mask_rng);
  Tensor<T> logits = net.forward(batch, training);
  auto loss = softmax_cross_entropy(logits, labels);
  if (training) net.backward(loss.d_logits);
  return StepResult<T>{loss.loss, loss.error};
}

}  // namespace fbk::nn
