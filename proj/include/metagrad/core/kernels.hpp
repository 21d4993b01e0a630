#pragma once

// Raw numeric kernels shared by the differentiable ops and by code that
// needs plain (non-recorded) arithmetic, such as gradient smoothing.
//
// Every kernel accumulates each output element in a fixed order that does
// not depend on the batch extent, so per-sample results are bitwise
// independent of how samples are grouped into batches.

#include <cstddef>
#include <string>
#include <vector>

#include "metagrad/core/tensor.hpp"

namespace metagrad::kernels {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernel,
                                  std::size_t stride, std::size_t padding) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw ShapeError("conv2d: expected input [B,C,H,W] and kernel [F,C,kh,kw], got " +
                     to_string(input) + " and " + to_string(kernel));
  }
  if (input[1] != kernel[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(input[1]) +
                     " channels but kernel expects " + std::to_string(kernel[1]));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{input[0], input[1], input[2], input[3], kernel[0], kernel[2],
                 kernel[3], stride, padding, 0, 0};
  const std::size_t ph = g.height + 2 * padding;
  const std::size_t pw = g.width + 2 * padding;
  if (ph < g.kh || pw < g.kw || (ph - g.kh) % stride != 0 ||
      (pw - g.kw) % stride != 0) {
    throw ShapeError("conv2d: non-integral output extent for input " +
                     to_string(input) + ", kernel " + to_string(kernel) +
                     ", stride " + std::to_string(stride) + ", padding " +
                     std::to_string(padding));
  }
  g.out_h = (ph - g.kh) / stride + 1;
  g.out_w = (pw - g.kw) / stride + 1;
  return g;
}

/// Unfold one sample [C,H,W] into columns [C*kh*kw, out_h*out_w].
inline void im2col(const ConvGeometry& g, const float* image, float* col) {
  const std::size_t np = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        float* row = col + ((c * g.kh + i) * g.kw + j) * np;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          float* dst = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                     static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width))
                          ? 0.0f
                          : src[x];
          }
        }
      }
    }
  }
}

/// Fold columns back into one sample, accumulating overlaps.
inline void col2im_add(const ConvGeometry& g, const float* col, float* image) {
  const std::size_t np = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const float* row = col + ((c * g.kh + i) * g.kw + j) * np;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          float* dst = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          const float* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                     static_cast<std::ptrdiff_t>(g.padding);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width)) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

/// Cross-correlation: out[b,f,oy,ox] = sum_{c,i,j} k[f,c,i,j] * in[b,c,oy*s+i-p,ox*s+j-p].
inline Tensor conv2d_forward(const Tensor& input, const Tensor& kernel,
                             std::size_t stride, std::size_t padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  Tensor out({g.batch, g.filters, g.out_h, g.out_w});
  const std::size_t np = g.out_pixels();
  const std::size_t kp = g.patch();
  std::vector<float> col(kp * np);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, input.data() + b * g.channels * g.height * g.width, col.data());
    float* o = out.data() + b * g.filters * np;
    for (std::size_t f = 0; f < g.filters; ++f) {
      float* orow = o + f * np;
      const float* w = kernel.data() + f * kp;
      for (std::size_t k = 0; k < kp; ++k) {
        const float wk = w[k];
        const float* crow = col.data() + k * np;
        for (std::size_t p = 0; p < np; ++p) orow[p] += wk * crow[p];
      }
    }
  }
  return out;
}

inline Tensor conv2d_backward_input(const Tensor& out_grad, const Tensor& kernel,
                                    const Shape& input_shape, std::size_t stride,
                                    std::size_t padding) {
  const ConvGeometry g = conv_geometry(input_shape, kernel.shape(), stride, padding);
  Tensor grad(input_shape);
  const std::size_t np = g.out_pixels();
  const std::size_t kp = g.patch();
  std::vector<float> dcol(kp * np);
  for (std::size_t b = 0; b < g.batch; ++b) {
    std::fill(dcol.begin(), dcol.end(), 0.0f);
    const float* dout = out_grad.data() + b * g.filters * np;
    for (std::size_t f = 0; f < g.filters; ++f) {
      const float* drow = dout + f * np;
      const float* w = kernel.data() + f * kp;
      for (std::size_t k = 0; k < kp; ++k) {
        const float wk = w[k];
        float* crow = dcol.data() + k * np;
        for (std::size_t p = 0; p < np; ++p) crow[p] += wk * drow[p];
      }
    }
    col2im_add(g, dcol.data(), grad.data() + b * g.channels * g.height * g.width);
  }
  return grad;
}

inline Tensor conv2d_backward_kernel(const Tensor& out_grad, const Tensor& input,
                                     const Shape& kernel_shape, std::size_t stride,
                                     std::size_t padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel_shape, stride, padding);
  Tensor grad(kernel_shape);
  const std::size_t np = g.out_pixels();
  const std::size_t kp = g.patch();
  std::vector<float> col(kp * np);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, input.data() + b * g.channels * g.height * g.width, col.data());
    const float* dout = out_grad.data() + b * g.filters * np;
    for (std::size_t f = 0; f < g.filters; ++f) {
      const float* drow = dout + f * np;
      float* w = grad.data() + f * kp;
      for (std::size_t k = 0; k < kp; ++k) {
        const float* crow = col.data() + k * np;
        float acc = 0.0f;
        for (std::size_t p = 0; p < np; ++p) acc += drow[p] * crow[p];
        w[k] += acc;
      }
    }
  }
  return grad;
}

/// Same-padding depthwise convolution of every [H,W] plane with one kernel.
inline Tensor depthwise_same(const Tensor& input, const Tensor& kernel2d) {
  if (input.rank() != 4 || kernel2d.rank() != 2 || kernel2d.dim(0) % 2 == 0 ||
      kernel2d.dim(0) != kernel2d.dim(1)) {
    throw ShapeError("depthwise_same: need [B,C,H,W] input and odd square kernel");
  }
  const Shape& s = input.shape();
  const std::size_t k = kernel2d.dim(0);
  Tensor planes = input.reshaped({s[0] * s[1], 1, s[2], s[3]});
  Tensor out = conv2d_forward(planes, kernel2d.reshaped({1, 1, k, k}), 1, k / 2);
  return out.reshaped(s);
}

inline void dense_forward(const float* in, const float* w, const float* bias,
                          float* out, std::size_t batch, std::size_t in_dim,
                          std::size_t out_dim) {
  for (std::size_t b = 0; b < batch; ++b) {
    float* o = out + b * out_dim;
    for (std::size_t j = 0; j < out_dim; ++j) o[j] = 0.0f;
    const float* x = in + b * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) {
      const float xi = x[i];
      const float* wrow = w + i * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += xi * wrow[j];
    }
    for (std::size_t j = 0; j < out_dim; ++j) o[j] += bias[j];
  }
}

struct PoolGeometry {
  std::size_t batch, channels, height, width, window, out_h, out_w;
};

inline PoolGeometry pool_geometry(const Shape& s, std::size_t window) {
  if (s.size() != 4) throw ShapeError("maxpool2d: expected [B,C,H,W], got " + to_string(s));
  if (window == 0 || window > s[2] || window > s[3]) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) +
                     " larger than spatial extent " + to_string(s));
  }
  if (s[2] % window != 0 || s[3] % window != 0) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) +
                     " does not divide spatial extent " + to_string(s));
  }
  return {s[0], s[1], s[2], s[3], window, s[2] / window, s[3] / window};
}

/// Non-overlapping max pooling. `argmax` receives, per output element, the
/// flat input index of the first maximal element in row-major scan order.
inline Tensor maxpool_forward(const Tensor& input, std::size_t window,
                              std::vector<std::size_t>* argmax = nullptr) {
  const PoolGeometry g = pool_geometry(input.shape(), window);
  Tensor out({g.batch, g.channels, g.out_h, g.out_w});
  if (argmax) argmax->resize(out.size());
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < g.batch * g.channels; ++bc) {
    const std::size_t base = bc * g.height * g.width;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox, ++o) {
        std::size_t best = base + oy * window * g.width + ox * window;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oy * window + i) * g.width + ox * window + j;
            if (input[idx] > input[best]) best = idx;
          }
        }
        out[o] = input[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

}  // namespace metagrad::kernels
