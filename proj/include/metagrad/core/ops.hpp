#pragma once

// Differentiable primitives recorded on an ad::Tape.

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "metagrad/core/autodiff.hpp"
#include "metagrad/core/kernels.hpp"

namespace metagrad::ad {

inline Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  return t.record(
      {a, b}, [](const Inputs& in) { return metagrad::add(*in[0], *in[1]); },
      [](const Tensor& g, const Tensor&, const Inputs&, std::vector<Tensor*>& d) {
        for (Tensor* di : d) {
          if (!di) continue;
          for (std::size_t i = 0; i < g.size(); ++i) (*di)[i] += g[i];
        }
      });
}

inline Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  return t.record(
      {a, b},
      [](const Inputs& in) {
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
        return out;
      },
      [](const Tensor& g, const Tensor&, const Inputs& in, std::vector<Tensor*>& d) {
        for (int k = 0; k < 2; ++k) {
          if (!d[k]) continue;
          const Tensor& other = *in[1 - k];
          for (std::size_t i = 0; i < g.size(); ++i) (*d[k])[i] += g[i] * other[i];
        }
      });
}

/// a * factor + shift, elementwise.
inline Var affine(Tape& t, Var a, float factor, float shift = 0.0f) {
  return t.record(
      {a},
      [factor, shift](const Inputs& in) {
        Tensor out = *in[0];
        for (float& v : out.values()) v = v * factor + shift;
        return out;
      },
      [factor](const Tensor& g, const Tensor&, const Inputs&, std::vector<Tensor*>& d) {
        for (std::size_t i = 0; i < g.size(); ++i) (*d[0])[i] += g[i] * factor;
      });
}

inline Var sum(Tape& t, Var a) {
  return t.record(
      {a},
      [](const Inputs& in) {
        float s = 0.0f;
        for (float v : in[0]->values()) s += v;
        return Tensor({1}, {s});
      },
      [](const Tensor& g, const Tensor&, const Inputs&, std::vector<Tensor*>& d) {
        for (float& v : d[0]->values()) v += g[0];
      });
}

inline Var reshape(Tape& t, Var a, Shape shape) {
  if (element_count(shape) != t.value(a).size()) {
    throw ShapeError("reshape: " + to_string(t.value(a).shape()) + " -> " + to_string(shape));
  }
  return t.record(
      {a}, [shape](const Inputs& in) { return in[0]->reshaped(shape); },
      [](const Tensor& g, const Tensor&, const Inputs&, std::vector<Tensor*>& d) {
        for (std::size_t i = 0; i < g.size(); ++i) (*d[0])[i] += g[i];
      });
}

/// [B, ...] -> [B, prod(...)]
inline Var flatten(Tape& t, Var a) {
  const Tensor& v = t.value(a);
  return reshape(t, a, {v.batch(), v.sample_size()});
}

/// out[b,o] = sum_i x[b,i] * w[i,o] + bias[o]
inline Var dense(Tape& t, Var x, Var w, Var bias) {
  const Shape& xs = t.value(x).shape();
  const Shape& ws = t.value(w).shape();
  const Shape& bs = t.value(bias).shape();
  if (xs.size() != 2 || ws.size() != 2 || bs.size() != 1 || xs[1] != ws[0] ||
      bs[0] != ws[1]) {
    throw ShapeError("dense: incompatible shapes input " + to_string(xs) + ", weights " +
                     to_string(ws) + ", bias " + to_string(bs));
  }
  return t.record(
      {x, w, bias},
      [](const Inputs& in) {
        const std::size_t B = in[0]->dim(0), I = in[1]->dim(0), O = in[1]->dim(1);
        Tensor out({B, O});
        kernels::dense_forward(in[0]->data(), in[1]->data(), in[2]->data(), out.data(), B, I, O);
        return out;
      },
      [](const Tensor& g, const Tensor&, const Inputs& in, std::vector<Tensor*>& d) {
        const Tensor& X = *in[0];
        const Tensor& W = *in[1];
        const std::size_t B = X.dim(0), I = W.dim(0), O = W.dim(1);
        if (d[0]) {
          for (std::size_t b = 0; b < B; ++b) {
            const float* gr = g.data() + b * O;
            float* dx = d[0]->data() + b * I;
            for (std::size_t i = 0; i < I; ++i) {
              const float* wr = W.data() + i * O;
              float acc = 0.0f;
              for (std::size_t o = 0; o < O; ++o) acc += wr[o] * gr[o];
              dx[i] += acc;
            }
          }
        }
        if (d[1]) {
          for (std::size_t b = 0; b < B; ++b) {
            const float* gr = g.data() + b * O;
            const float* xr = X.data() + b * I;
            for (std::size_t i = 0; i < I; ++i) {
              float* dw = d[1]->data() + i * O;
              const float xi = xr[i];
              for (std::size_t o = 0; o < O; ++o) dw[o] += xi * gr[o];
            }
          }
        }
        if (d[2]) {
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t o = 0; o < O; ++o) (*d[2])[o] += g[b * O + o];
          }
        }
      });
}

inline Var conv2d(Tape& t, Var x, Var kernel, std::size_t stride = 1, std::size_t padding = 0) {
  kernels::conv_geometry(t.value(x).shape(), t.value(kernel).shape(), stride, padding);
  return t.record(
      {x, kernel},
      [stride, padding](const Inputs& in) {
        return kernels::conv2d_forward(*in[0], *in[1], stride, padding);
      },
      [stride, padding](const Tensor& g, const Tensor&, const Inputs& in,
                        std::vector<Tensor*>& d) {
        if (d[0]) {
          Tensor dx = kernels::conv2d_backward_input(g, *in[1], in[0]->shape(), stride, padding);
          for (std::size_t i = 0; i < dx.size(); ++i) (*d[0])[i] += dx[i];
        }
        if (d[1]) {
          Tensor dk = kernels::conv2d_backward_kernel(g, *in[0], in[1]->shape(), stride, padding);
          for (std::size_t i = 0; i < dk.size(); ++i) (*d[1])[i] += dk[i];
        }
      });
}

/// Adds bias[c] to every element of channel c of a [B,C,H,W] tensor.
inline Var add_channel_bias(Tape& t, Var x, Var bias) {
  const Shape& xs = t.value(x).shape();
  const Shape& bs = t.value(bias).shape();
  if (xs.size() != 4 || bs.size() != 1 || bs[0] != xs[1]) {
    throw ShapeError("add_channel_bias: input " + to_string(xs) + ", bias " + to_string(bs));
  }
  return t.record(
      {x, bias},
      [](const Inputs& in) {
        Tensor out = *in[0];
        const Shape& s = out.shape();
        const std::size_t plane = s[2] * s[3];
        for (std::size_t b = 0; b < s[0]; ++b)
          for (std::size_t c = 0; c < s[1]; ++c) {
            float* p = out.data() + (b * s[1] + c) * plane;
            const float bc = (*in[1])[c];
            for (std::size_t i = 0; i < plane; ++i) p[i] += bc;
          }
        return out;
      },
      [](const Tensor& g, const Tensor&, const Inputs&, std::vector<Tensor*>& d) {
        const Shape& s = g.shape();
        const std::size_t plane = s[2] * s[3];
        if (d[0]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*d[0])[i] += g[i];
        }
        if (d[1]) {
          for (std::size_t b = 0; b < s[0]; ++b)
            for (std::size_t c = 0; c < s[1]; ++c) {
              const float* p = g.data() + (b * s[1] + c) * plane;
              float acc = 0.0f;
              for (std::size_t i = 0; i < plane; ++i) acc += p[i];
              (*d[1])[c] += acc;
            }
        }
      });
}

/// max(0, x); the derivative at 0 is taken as 0.
inline Var relu(Tape& t, Var x) {
  return t.record(
      {x},
      [](const Inputs& in) {
        Tensor out = *in[0];
        for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
        return out;
      },
      [](const Tensor& g, const Tensor&, const Inputs& in, std::vector<Tensor*>& d) {
        const Tensor& x = *in[0];
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0f) (*d[0])[i] += g[i];
      });
}

/// Non-overlapping window max; gradient goes to the first maximum in scan order.
inline Var maxpool2d(Tape& t, Var x, std::size_t window) {
  kernels::pool_geometry(t.value(x).shape(), window);
  return t.record(
      {x}, [window](const Inputs& in) { return kernels::maxpool_forward(*in[0], window); },
      [window](const Tensor& g, const Tensor&, const Inputs& in, std::vector<Tensor*>& d) {
        std::vector<std::size_t> arg;
        kernels::maxpool_forward(*in[0], window, &arg);
        for (std::size_t o = 0; o < g.size(); ++o) (*d[0])[arg[o]] += g[o];
      });
}

/// Spatial mean: [B,C,H,W] -> [B,C].
inline Var avgpool_global(Tape& t, Var x) {
  if (t.value(x).rank() != 4) {
    throw ShapeError("avgpool_global: expected [B,C,H,W], got " + to_string(t.value(x).shape()));
  }
  return t.record(
      {x},
      [](const Inputs& in) {
        const Shape& s = in[0]->shape();
        const std::size_t plane = s[2] * s[3];
        Tensor out({s[0], s[1]});
        for (std::size_t bc = 0; bc < s[0] * s[1]; ++bc) {
          const float* p = in[0]->data() + bc * plane;
          float acc = 0.0f;
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
          out[bc] = acc / static_cast<float>(plane);
        }
        return out;
      },
      [](const Tensor& g, const Tensor&, const Inputs& in, std::vector<Tensor*>& d) {
        const Shape& s = in[0]->shape();
        const std::size_t plane = s[2] * s[3];
        for (std::size_t bc = 0; bc < s[0] * s[1]; ++bc) {
          const float share = g[bc] / static_cast<float>(plane);
          float* p = d[0]->data() + bc * plane;
          for (std::size_t i = 0; i < plane; ++i) p[i] += share;
        }
      });
}

enum class Reduction { Mean, Sum };

/// Cross-entropy of softmax(logits) against class indices, stabilized by
/// max-subtraction. Mean (default) or sum over the batch.
inline Var softmax_cross_entropy(Tape& t, Var logits, std::vector<std::size_t> labels,
                                 Reduction reduction = Reduction::Mean) {
  const Shape& s = t.value(logits).shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + to_string(s) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t y : labels) {
    if (y >= s[1]) {
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(y) +
                        " outside [0," + std::to_string(s[1]) + ")");
    }
  }
  const float denom = reduction == Reduction::Mean ? static_cast<float>(s[0]) : 1.0f;
  return t.record(
      {logits},
      [labels, denom](const Inputs& in) {
        const std::size_t B = in[0]->dim(0), C = in[0]->dim(1);
        float total = 0.0f;
        for (std::size_t b = 0; b < B; ++b) {
          const float* l = in[0]->data() + b * C;
          float m = l[0];
          for (std::size_t c = 1; c < C; ++c) m = std::max(m, l[c]);
          float z = 0.0f;
          for (std::size_t c = 0; c < C; ++c) z += std::exp(l[c] - m);
          total += std::log(z) - (l[labels[b]] - m);
        }
        return Tensor({1}, {total / denom});
      },
      [labels, denom](const Tensor& g, const Tensor&, const Inputs& in,
                      std::vector<Tensor*>& d) {
        const std::size_t B = in[0]->dim(0), C = in[0]->dim(1);
        const float scale = g[0] / denom;
        std::vector<float> p(C);
        for (std::size_t b = 0; b < B; ++b) {
          const float* l = in[0]->data() + b * C;
          float m = l[0];
          for (std::size_t c = 1; c < C; ++c) m = std::max(m, l[c]);
          float z = 0.0f;
          for (std::size_t c = 0; c < C; ++c) {
            p[c] = std::exp(l[c] - m);
            z += p[c];
          }
          float* dl = d[0]->data() + b * C;
          for (std::size_t c = 0; c < C; ++c) {
            const float target = c == labels[b] ? 1.0f : 0.0f;
            dl[c] += (p[c] / z - target) * scale;
          }
        }
      });
}

/// sum_s weights[s] * parts[s]; every part has the same shape.
inline Var weighted_sum(Tape& t, const std::vector<Var>& parts, std::vector<float> weights) {
  if (parts.empty() || parts.size() != weights.size()) {
    throw ShapeError("weighted_sum: need one weight per part");
  }
  for (Var p : parts) require_same_shape(t.value(parts[0]), t.value(p), "weighted_sum");
  return t.record(
      parts,
      [weights](const Inputs& in) {
        Tensor out(in[0]->shape());
        for (std::size_t s = 0; s < in.size(); ++s)
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[s] * (*in[s])[i];
        return out;
      },
      [weights](const Tensor& g, const Tensor&, const Inputs&, std::vector<Tensor*>& d) {
        for (std::size_t s = 0; s < d.size(); ++s) {
          if (!d[s]) continue;
          for (std::size_t i = 0; i < g.size(); ++i) (*d[s])[i] += weights[s] * g[i];
        }
      });
}

/// Linear gather: out[i] = x[map[i]] or 0 where map[i] < 0. Expresses
/// resize/pad style spatial transforms; the backward pass scatters.
inline Var index_map(Tape& t, Var x, std::shared_ptr<const std::vector<std::int32_t>> map) {
  if (map->size() != t.value(x).size()) {
    throw ShapeError("index_map: map size differs from input size");
  }
  return t.record(
      {x},
      [map](const Inputs& in) {
        Tensor out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i) {
          const std::int32_t src = (*map)[i];
          if (src >= 0) out[i] = (*in[0])[static_cast<std::size_t>(src)];
        }
        return out;
      },
      [map](const Tensor& g, const Tensor&, const Inputs&, std::vector<Tensor*>& d) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::int32_t src = (*map)[i];
          if (src >= 0) (*d[0])[static_cast<std::size_t>(src)] += g[i];
        }
      });
}

}  // namespace metagrad::ad
