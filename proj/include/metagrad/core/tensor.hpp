#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metagrad/core/error.hpp"

namespace metagrad {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major float32 array. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<float> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (element_count(shape_) != values_.size()) {
      throw ShapeError("tensor: shape " + to_string(shape_) + " needs " +
                       std::to_string(element_count(shape_)) +
                       " values, got " + std::to_string(values_.size()));
    }
  }

  Tensor(Shape shape, std::initializer_list<float> values)
      : Tensor(std::move(shape), std::vector<float>(values)) {}

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }

  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  /// Same values viewed with a different shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != values_.size()) {
      throw ShapeError("reshape: " + to_string(shape_) + " -> " +
                       to_string(shape));
    }
    return Tensor(std::move(shape), values_);
  }

  /// Number of samples along the leading (batch) axis.
  std::size_t batch() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t sample_size() const {
    return shape_.empty() ? values_.size() : values_.size() / std::max<std::size_t>(shape_[0], 1);
  }

  std::span<float> sample(std::size_t b) {
    return values().subspan(b * sample_size(), sample_size());
  }
  std::span<const float> sample(std::size_t b) const {
    return values().subspan(b * sample_size(), sample_size());
  }

 private:
  Shape shape_;
  std::vector<float> values_;
};

/// Shape and bit pattern identical (distinguishes -0.0 from +0.0).
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](float v) { return std::isfinite(v); });
}

/// Rows b of `t` as a new tensor with leading extent 1.
inline Tensor take_sample(const Tensor& t, std::size_t b) {
  Shape s = t.shape();
  s[0] = 1;
  auto row = t.sample(b);
  return Tensor(std::move(s), std::vector<float>(row.begin(), row.end()));
}

/// Concatenate along the leading axis; all parts share trailing extents.
inline Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no parts");
  Shape s = parts[0].shape();
  std::size_t total = 0;
  std::vector<float> values;
  for (const auto& p : parts) {
    if (p.rank() != s.size() ||
        !std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1)) {
      throw ShapeError("concat_batch: trailing extents differ");
    }
    total += p.dim(0);
    values.insert(values.end(), p.values().begin(), p.values().end());
  }
  s[0] = total;
  return Tensor(std::move(s), std::move(values));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "subtract");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, float s) {
  Tensor out = a;
  for (float& v : out.values()) v *= s;
  return out;
}

/// Elementwise -1/0/+1 with sign(0) = 0.
inline Tensor sign(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = a[i] > 0.0f ? 1.0f : (a[i] < 0.0f ? -1.0f : 0.0f);
  }
  return out;
}

struct L1Normalized {
  Tensor value;
  bool degenerate = false;  // input was identically zero
};

/// input / sum|input|. A zero input yields a zero tensor and the flag.
inline L1Normalized l1_normalize(const Tensor& input) {
  double norm = 0.0;
  for (float v : input.values()) norm += std::fabs(static_cast<double>(v));
  if (norm == 0.0) return {Tensor(input.shape()), true};
  const float inv = static_cast<float>(norm);
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] / inv;
  return {std::move(out), false};
}

inline float linf_norm(std::span<const float> v) {
  float m = 0.0f;
  for (float x : v) m = std::max(m, std::fabs(x));
  return m;
}

inline double l1_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += std::fabs(static_cast<double>(x));
  return s;
}

inline double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace metagrad
