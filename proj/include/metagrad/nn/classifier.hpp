#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metagrad/core/ops.hpp"
#include "metagrad/core/rng.hpp"
#include "metagrad/nn/architecture.hpp"

namespace metagrad::nn {

/// Provenance recorded with every trained model.
struct TrainingRecord {
  std::uint64_t seed = 0;       // parameter init + minibatch order
  std::uint64_t data_seed = 0;  // dataset generator seed
  std::uint32_t epochs = 0;
  double accuracy = 0.0;        // fraction correct on the evaluation split
  bool adversarially_trained = false;
  float adv_epsilon = 0.0f;     // FGSM budget used during training (0..255 units)

  bool operator==(const TrainingRecord&) const = default;
};

/// A sequential differentiable classifier: architecture + parameters.
/// Immutable after training, so concurrent read-only use is safe.
class Classifier {
 public:
  Classifier() = default;

  Classifier(ArchitectureSpec spec, std::vector<Tensor> params, TrainingRecord record = {})
      : spec_(std::move(spec)), params_(std::move(params)), record_(record) {
    const auto infos = spec_.parameters();
    if (infos.size() != params_.size()) {
      throw ShapeError("classifier '" + spec_.name + "': expected " + std::to_string(infos.size()) +
                       " parameter tensors, got " + std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < infos.size(); ++i) {
      if (infos[i].shape != params_[i].shape()) {
        throw ShapeError("classifier '" + spec_.name + "': parameter " + infos[i].name + " has shape " +
                         to_string(params_[i].shape()) + ", expected " + to_string(infos[i].shape));
      }
    }
  }

  const ArchitectureSpec& spec() const { return spec_; }
  const std::string& name() const { return spec_.name; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::vector<Tensor>& mutable_parameters() { return params_; }
  const TrainingRecord& record() const { return record_; }
  TrainingRecord& mutable_record() { return record_; }
  std::size_t classes() const { return spec_.classes; }

  /// Records the forward pass on `tape` using the given parameter handles.
  ad::Var forward(ad::Tape& tape, ad::Var input, std::span<const ad::Var> params) const {
    check_input(tape.value(input).shape());
    ad::Var h = input;
    std::size_t p = 0;
    for (const Layer& l : spec_.layers) {
      switch (l.kind) {
        case LayerKind::Normalize:
          h = ad::affine(tape, h, 1.0f / 127.5f, -1.0f);
          break;
        case LayerKind::Conv:
          h = ad::conv2d(tape, h, params[p], 1, l.kernel / 2);
          h = ad::add_channel_bias(tape, h, params[p + 1]);
          p += 2;
          break;
        case LayerKind::Relu:
          h = ad::relu(tape, h);
          break;
        case LayerKind::MaxPool:
          h = ad::maxpool2d(tape, h, l.window);
          break;
        case LayerKind::GlobalAvgPool:
          h = ad::avgpool_global(tape, h);
          break;
        case LayerKind::Flatten:
          h = ad::flatten(tape, h);
          break;
        case LayerKind::Dense:
          h = ad::dense(tape, h, params[p], params[p + 1]);
          p += 2;
          break;
      }
    }
    return h;
  }

  /// Forward pass with parameters held constant (no parameter gradients).
  ad::Var forward(ad::Tape& tape, ad::Var input) const {
    std::vector<ad::Var> handles;
    handles.reserve(params_.size());
    for (const Tensor& t : params_) handles.push_back(tape.leaf_ref(t, false));
    return forward(tape, input, handles);
  }

  /// Pre-softmax outputs [B, classes].
  Tensor logits(const Tensor& batch) const {
    ad::Tape tape;
    return tape.value(forward(tape, tape.leaf_ref(batch)));
  }

  /// Gradient w.r.t. the input of sum_b CE(f(x_b), labels_b), i.e. the exact
  /// per-sample input gradient of the cross-entropy toward `labels`.
  /// Callers wanting a targeted objective pass target labels and negate.
  Tensor input_gradient(const Tensor& x, const std::vector<std::size_t>& labels) const {
    ad::Tape tape;
    ad::Var in = tape.leaf_ref(x, true);
    ad::Var loss = ad::softmax_cross_entropy(tape, forward(tape, in), labels, ad::Reduction::Sum);
    tape.backward(loss);
    return tape.grad(in);
  }

  std::vector<std::size_t> predict(const Tensor& batch) const {
    const Tensor l = logits(batch);
    std::vector<std::size_t> out(l.dim(0));
    for (std::size_t b = 0; b < out.size(); ++b) out[b] = argmax(l.sample(b));
    return out;
  }

 private:
  void check_input(const Shape& s) const {
    if (s.size() != 4 || !std::equal(spec_.input.begin(), spec_.input.end(), s.begin() + 1)) {
      throw ShapeError("classifier '" + spec_.name + "': batch shape " + to_string(s) +
                       " does not match input " + to_string(spec_.input));
    }
  }

  ArchitectureSpec spec_;
  std::vector<Tensor> params_;
  TrainingRecord record_;
};

/// Fresh classifier: weights ~ U(-a, a) with a = sqrt(3 / fan_in) (variance
/// 1/fan_in), biases zero. Deterministic for a given seed.
inline Classifier build(const ArchitectureSpec& spec, std::uint64_t seed) {
  const auto infos = spec.parameters();
  Rng rng(seed);
  std::vector<Tensor> params;
  for (const auto& info : infos) {
    Tensor t(info.shape);
    if (info.fan_in > 0) {
      const double a = std::sqrt(3.0 / static_cast<double>(info.fan_in));
      for (float& v : t.values()) v = static_cast<float>(rng.uniform(-a, a));
    }
    params.push_back(std::move(t));
  }
  TrainingRecord rec;
  rec.seed = seed;
  return Classifier(spec, std::move(params), rec);
}

}  // namespace metagrad::nn
