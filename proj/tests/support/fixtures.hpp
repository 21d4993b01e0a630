#pragma once

#include <string>
#include <vector>

#include "metagrad/core/rng.hpp"
#include "metagrad/nn/zoo.hpp"

namespace fixtures {

using namespace metagrad;

/// Random integer-valued image batch [B,C,S,S] in [lo, hi].
inline Tensor random_image(std::uint64_t seed, std::size_t B = 1, std::size_t C = 3, std::size_t S = 8,
                           int lo = 20, int hi = 235) {
  Rng rng(seed);
  Tensor t({B, C, S, S});
  for (float& v : t.values()) v = static_cast<float>(rng.uniform_int(lo, hi));
  return t;
}

inline Tensor random_tensor(std::uint64_t seed, Shape shape, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>(scale * rng.normal());
  return t;
}

inline nn::ArchitectureSpec small_spec(const std::string& name, const std::string& body, std::size_t side = 8,
                                       std::size_t classes = 4) {
  return nn::ArchitectureSpec::parse("name=" + name + ";input=3x" + std::to_string(side) + "x" +
                                     std::to_string(side) + ";classes=" + std::to_string(classes) +
                                     ";layers=normalize " + body + " dense(" + std::to_string(classes) + ")");
}

/// Untrained heterogeneous zoo on 3x8x8 inputs: `white` white-box and
/// `black` black-box members with random weights.
inline nn::ModelZoo random_zoo(std::size_t white = 6, std::size_t black = 2, std::uint64_t seed = 1,
                               std::size_t classes = 4) {
  const std::vector<std::string> bodies = {
      "conv(4,3) relu maxpool(2) flatten",
      "conv(4,3) relu gap",
      "conv(6,3) relu maxpool(2) conv(6,3) relu gap",
      "conv(4,5) relu maxpool(4) flatten",
      "conv(3,3) relu conv(3,3) relu maxpool(2) flatten",
      "maxpool(2) conv(6,3) relu gap",
      "conv(5,3) relu maxpool(2) flatten dense(8) relu",
      "conv(8,3) relu gap",
  };
  std::vector<nn::Classifier> models;
  std::vector<std::size_t> w, b;
  for (std::size_t i = 0; i < white + black; ++i) {
    const auto spec = small_spec("m" + std::to_string(i), bodies[i % bodies.size()], 8, classes);
    models.push_back(nn::build(spec, seed * 1000 + i));
    (i < white ? w : b).push_back(i);
  }
  return nn::ModelZoo(std::move(models), std::move(w), std::move(b));
}

/// `count` white-box copies of one model (identical weights) plus one black-box model.
inline nn::ModelZoo identical_zoo(const nn::Classifier& model, std::size_t count) {
  std::vector<nn::Classifier> models(count, model);
  models.push_back(model);
  std::vector<std::size_t> w(count);
  for (std::size_t i = 0; i < count; ++i) w[i] = i;
  return nn::ModelZoo(std::move(models), std::move(w), {count});
}

/// Two-class linear classifier on 3x8x8 inputs with random weights.
inline nn::Classifier linear_two_class(std::uint64_t seed) {
  return nn::build(small_spec("linear", "flatten", 8, 2), seed);
}

}  // namespace fixtures
