#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "metagrad/attack/method.hpp"
#include "metagrad/core/kernels.hpp"
#include "metagrad/core/rng.hpp"
#include "metagrad/core/tensor.hpp"

namespace metagrad::attack {

/// One random resize-and-pad decision for a square S x S image.
struct DimDraw {
  bool applied = false;
  std::size_t side = 0;  // resized side r
  std::size_t top = 0;
  std::size_t left = 0;
};

/// With probability p: r ~ U{ceil(min_fraction * S), ..., S}, then a pad
/// offset uniform over the S - r + 1 positions on each axis.
inline DimDraw draw_dim(std::size_t side, const DimTransform& cfg, Rng& rng) {
  DimDraw d;
  d.applied = rng.bernoulli(cfg.probability);
  if (!d.applied) return d;
  auto lo = static_cast<std::size_t>(std::ceil(static_cast<double>(cfg.min_fraction) * static_cast<double>(side)));
  lo = std::clamp<std::size_t>(lo, 1, side);
  d.side = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(side)));
  const auto slack = static_cast<std::int64_t>(side - d.side);
  d.top = static_cast<std::size_t>(rng.uniform_int(0, slack));
  d.left = static_cast<std::size_t>(rng.uniform_int(0, slack));
  return d;
}

/// Gather map realising the draws on a [B,C,S,S] tensor: nearest-neighbour
/// resize to r x r placed at (top, left) on a zero canvas. Samples whose
/// draw was not applied map to themselves.
inline std::vector<std::int32_t> dim_index_map(const Shape& shape, const std::vector<DimDraw>& draws) {
  if (shape.size() != 4 || shape[2] != shape[3] || draws.size() != shape[0]) {
    throw ShapeError("dim_transform: expected square [B,C,S,S] input with one draw per sample, got " +
                     to_string(shape));
  }
  const std::size_t C = shape[1], S = shape[2];
  std::vector<std::int32_t> map(element_count(shape), -1);
  for (std::size_t b = 0; b < shape[0]; ++b) {
    const DimDraw& d = draws[b];
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t plane = (b * C + c) * S * S;
      if (!d.applied) {
        for (std::size_t i = 0; i < S * S; ++i) map[plane + i] = static_cast<std::int32_t>(plane + i);
        continue;
      }
      for (std::size_t y = 0; y < d.side; ++y) {
        const std::size_t sy = y * S / d.side;
        for (std::size_t x = 0; x < d.side; ++x) {
          const std::size_t sx = x * S / d.side;
          map[plane + (d.top + y) * S + d.left + x] = static_cast<std::int32_t>(plane + sy * S + sx);
        }
      }
    }
  }
  return map;
}

inline Tensor apply_index_map(const Tensor& x, const std::vector<std::int32_t>& map) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (map[i] >= 0) out[i] = x[static_cast<std::size_t>(map[i])];
  }
  return out;
}

/// Diverse-input transform of a batch, one independent draw per sample.
inline Tensor dim_transform(const Tensor& x, float p, float min_fraction, Rng& rng) {
  if (p < 0.0f || p > 1.0f) throw ConfigError("dim_transform: probability must lie in [0,1]");
  if (x.rank() != 4) throw ShapeError("dim_transform: expected [B,C,S,S], got " + to_string(x.shape()));
  const DimTransform cfg{p, min_fraction};
  std::vector<DimDraw> draws;
  for (std::size_t b = 0; b < x.dim(0); ++b) draws.push_back(draw_dim(x.dim(2), cfg, rng));
  return apply_index_map(x, dim_index_map(x.shape(), draws));
}

/// Normalized k x k Gaussian, entries proportional to exp(-(i^2 + j^2) / (2 sigma^2))
/// for offsets i, j in [-k/2, k/2].
inline Tensor gaussian_kernel(std::size_t k, float sigma) {
  if (k % 2 == 0) throw ConfigError("gaussian_kernel: size must be odd, got " + std::to_string(k));
  if (!(sigma > 0.0f)) throw ConfigError("gaussian_kernel: sigma must be positive");
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<double> w(k * k);
  double total = 0.0;
  const double s2 = 2.0 * static_cast<double>(sigma) * static_cast<double>(sigma);
  for (std::ptrdiff_t i = -r; i <= r; ++i)
    for (std::ptrdiff_t j = -r; j <= r; ++j) {
      const double v = std::exp(-static_cast<double>(i * i + j * j) / s2);
      w[static_cast<std::size_t>((i + r) * static_cast<std::ptrdiff_t>(k) + j + r)] = v;
      total += v;
    }
  Tensor out({k, k});
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i] / total);
  return out;
}

/// Depthwise same-padded convolution of the gradient with `kernel`.
inline Tensor tim_smooth(const Tensor& gradient, const Tensor& kernel) {
  if (kernel.size() == 1 && kernel[0] == 1.0f) return gradient;
  return kernels::depthwise_same(gradient, kernel);
}

}  // namespace metagrad::attack
