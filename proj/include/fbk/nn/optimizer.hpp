#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "fbk/errors.hpp"
#include "fbk/tensor.hpp"

namespace fbk::nn {

/// One trainable tensor with its gradient buffer and update policy flags.
template <typename T>
struct ParamRef {
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
  std::string name;
  bool decay = true;     // participates in weight decay
  bool fb_scope = false; // belongs to an FB layer; slow-start warmup applies
};

template <typename T>
struct SgdState {
  std::vector<Tensor<T>> velocity;
};

/// SGD with momentum and coupled weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * scale(param) * v
/// Non-finite gradients abort training with a diagnostic naming the tensor.
template <typename T>
void sgd_step(const std::vector<ParamRef<T>>& params, SgdState<T>& state, double lr,
              double momentum, double weight_decay,
              const std::function<double(const ParamRef<T>&)>& lr_scale = {}) {
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.value->shape());
  }
  if (state.velocity.size() != params.size()) {
    throw contract_error("optimizer state tracks " + std::to_string(state.velocity.size()) +
                         " tensors, step got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    Tensor<T>& v = state.velocity[i];
    if (v.shape() != p.value->shape()) {
      throw contract_error("optimizer state shape mismatch for " + p.name);
    }
    const double wd = p.decay ? weight_decay : 0.0;
    const double scale = lr_scale ? lr_scale(p) : 1.0;
    const T step = static_cast<T>(lr * scale);
    for (std::size_t e = 0; e < v.numel(); ++e) {
      const T g = (*p.grad)[e];
      if (!std::isfinite(g)) {
        throw data_error("non-finite gradient in " + p.name + " at element " +
                         std::to_string(e) + "; training aborted");
      }
      v[e] = static_cast<T>(momentum) * v[e] + g + static_cast<T>(wd) * (*p.value)[e];
      (*p.value)[e] -= step * v[e];
    }
  }
}

}  // namespace fbk::nn
