#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "metagrad/core/ops.hpp"
#include "metagrad/core/rng.hpp"
#include "metagrad/nn/classifier.hpp"

namespace metagrad::nn {

/// Images [N,C,H,W] in 0..255 with one class index per image.
struct LabeledSet {
  Tensor images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }

  LabeledSet subset(const std::vector<std::size_t>& indices) const {
    Shape s = images.shape();
    s[0] = indices.size();
    Tensor out(s);
    std::vector<std::size_t> lab;
    lab.reserve(indices.size());
    const std::size_t n = images.sample_size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      auto src = images.sample(indices[i]);
      std::copy(src.begin(), src.end(), out.data() + i * n);
      lab.push_back(labels[indices[i]]);
    }
    return {std::move(out), std::move(lab)};
  }
};

struct TrainOptions {
  std::uint32_t epochs = 10;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  float final_lr_fraction = 1.0f;  // learning rate decays linearly to this fraction over the epochs
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;  // recorded only
};

inline double accuracy(const Classifier& model, const LabeledSet& set, std::size_t chunk = 256) {
  if (set.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < set.size(); start += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, set.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const LabeledSet part = set.subset(idx);
    const auto pred = model.predict(part.images);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == part.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

namespace detail {

inline void check_labels(const Classifier& model, const LabeledSet& set) {
  if (set.images.rank() != 4 || set.images.dim(0) != set.labels.size()) {
    throw ShapeError("training set: images " + to_string(set.images.shape()) + " with " +
                     std::to_string(set.labels.size()) + " labels");
  }
  for (std::size_t y : set.labels) {
    if (y >= model.classes()) {
      throw ConfigError("training set: label " + std::to_string(y) + " >= class count " +
                        std::to_string(model.classes()));
    }
  }
}

inline Tensor fgsm_examples(const Classifier& model, const Tensor& x,
                            const std::vector<std::size_t>& y, float epsilon) {
  const Tensor dir = sign(model.input_gradient(x, y));
  Tensor adv = x;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = std::clamp(adv[i] + epsilon * dir[i], 0.0f, 255.0f);
  }
  return adv;
}

/// Minibatch SGD with momentum. With epsilon > 0 each minibatch is
/// augmented by its FGSM counterpart computed against the current weights.
inline Classifier sgd(Classifier model, const LabeledSet& data, const TrainOptions& opt,
                      float adv_epsilon, bool adversarial, const LabeledSet* eval) {
  check_labels(model, data);
  if (opt.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (opt.final_lr_fraction < 0.0f || opt.final_lr_fraction > 1.0f) {
    throw ConfigError("train: final_lr_fraction must lie in [0,1]");
  }
  if (adv_epsilon < 0.0f || adv_epsilon > 255.0f) throw ConfigError("adv_train: epsilon outside [0,255]");
  Rng rng = Rng::derive(opt.seed, 0, 7);
  auto& params = model.mutable_parameters();
  std::vector<Tensor> velocity;
  for (const Tensor& p : params) velocity.emplace_back(p.shape());

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::uint32_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const float progress = opt.epochs > 1 ? static_cast<float>(epoch) / static_cast<float>(opt.epochs - 1) : 0.0f;
    const float lr = opt.learning_rate * (1.0f - progress * (1.0f - opt.final_lr_fraction));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + start,
                                         order.begin() + std::min(order.size(), start + opt.batch_size));
      LabeledSet batch = data.subset(idx);
      if (adv_epsilon > 0.0f) {
        Tensor adv = fgsm_examples(model, batch.images, batch.labels, adv_epsilon);
        const Tensor parts[] = {batch.images, adv};
        batch.images = concat_batch(parts);
        const auto labels = batch.labels;
        batch.labels.insert(batch.labels.end(), labels.begin(), labels.end());
      }
      ad::Tape tape;
      std::vector<ad::Var> handles;
      for (const Tensor& p : params) handles.push_back(tape.leaf_ref(p, true));
      ad::Var x = tape.leaf_ref(batch.images);
      ad::Var loss = ad::softmax_cross_entropy(tape, model.forward(tape, x, handles), batch.labels);
      const float value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        throw NumericalError("train '" + model.name() + "': loss diverged (" + std::to_string(value) +
                             ") at epoch " + std::to_string(epoch) + ", batch starting at " +
                             std::to_string(start) + "; lower the learning rate");
      }
      tape.backward(loss);
      for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor g = tape.grad(handles[k]);
        Tensor& v = velocity[k];
        Tensor& p = params[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
          v[i] = opt.momentum * v[i] + g[i];
          p[i] -= lr * v[i];
          if (!std::isfinite(p[i])) {
            throw NumericalError("train '" + model.name() + "': parameters overflowed at epoch " +
                                 std::to_string(epoch) + "; lower the learning rate");
          }
        }
      }
    }
  }
  TrainingRecord& rec = model.mutable_record();
  rec.seed = opt.seed;
  rec.data_seed = opt.data_seed;
  rec.epochs = opt.epochs;
  rec.adversarially_trained = adversarial;
  rec.adv_epsilon = adv_epsilon;
  rec.accuracy = accuracy(model, eval ? *eval : data);
  return model;
}

}  // namespace detail

/// Plain training on softmax cross-entropy. `eval` (if given) is the split
/// whose accuracy is recorded; otherwise the training split is used.
inline Classifier train(Classifier model, const LabeledSet& data, const TrainOptions& opt,
                        const LabeledSet* eval = nullptr) {
  return detail::sgd(std::move(model), data, opt, 0.0f, false, eval);
}

/// FGSM adversarial training at budget `epsilon` (0..255 units). epsilon = 0
/// reproduces train()'s parameters exactly; the record is still flagged.
inline Classifier adv_train(Classifier model, const LabeledSet& data, float epsilon,
                            const TrainOptions& opt, const LabeledSet* eval = nullptr) {
  return detail::sgd(std::move(model), data, opt, epsilon, true, eval);
}

}  // namespace metagrad::nn
