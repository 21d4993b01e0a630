#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "metagrad/core/tensor.hpp"

namespace metagrad::attack {

/// L-infinity budget in 0..255 pixel units.
struct AttackBudget {
  float epsilon = 8.0f;
  float pixel_min = 0.0f;
  float pixel_max = 255.0f;

  void validate() const {
    if (!(epsilon > 0.0f && epsilon <= 255.0f)) {
      throw ConfigError("attack budget: epsilon must lie in (0, 255], got " + std::to_string(epsilon));
    }
  }
};

/// Elementwise clamp to [anchor - eps, anchor + eps] intersected with the pixel range.
inline Tensor clip_to_ball(const Tensor& x, const Tensor& anchor, const AttackBudget& budget) {
  require_same_shape(x, anchor, "clip_to_ball");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float lo = std::max(anchor[i] - budget.epsilon, budget.pixel_min);
    const float hi = std::min(anchor[i] + budget.epsilon, budget.pixel_max);
    out[i] = std::min(std::max(x[i], lo), hi);
  }
  return out;
}

/// True when x is inside the eps-ball around anchor and the pixel range.
/// Bounds are computed exactly as clip_to_ball computes them.
inline bool within_ball(const Tensor& x, const Tensor& anchor, const AttackBudget& budget,
                        float slack = 0.0f) {
  require_same_shape(x, anchor, "within_ball");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float lo = std::max(anchor[i] - budget.epsilon, budget.pixel_min);
    const float hi = std::min(anchor[i] + budget.epsilon, budget.pixel_max);
    if (x[i] < lo - slack || x[i] > hi + slack) return false;
  }
  return true;
}

}  // namespace metagrad::attack
