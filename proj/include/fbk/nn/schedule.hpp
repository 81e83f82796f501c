#pragma once

#include <cstddef>
#include <vector>

namespace fbk::nn {

/// Slow-start multiplier for FB-layer learning rates: 0.1 at epoch 0, rising
/// linearly to 1.0 at warmup_epochs, 1.0 afterwards. Non-FB layers always
/// train at the full rate.
inline double warmup_multiplier(std::size_t epoch, std::size_t warmup_epochs) {
  if (warmup_epochs == 0 || epoch >= warmup_epochs) return 1.0;
  return 0.1 + static_cast<double>(epoch) * (0.9 / static_cast<double>(warmup_epochs));
}

/// Step decay: the base rate is multiplied by `factor` at each listed epoch.
inline double epoch_lr(double base, std::size_t epoch,
                       const std::vector<std::size_t>& decay_epochs, double factor) {
  double lr = base;
  for (std::size_t de : decay_epochs)
    if (epoch >= de) lr *= factor;
  return lr;
}

}  // namespace fbk::nn
