#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "metagrad/attack/budget.hpp"
#include "metagrad/attack/method.hpp"
#include "metagrad/attack/transforms.hpp"
#include "metagrad/core/ops.hpp"
#include "metagrad/core/rng.hpp"
#include "metagrad/nn/classifier.hpp"

namespace metagrad::attack {

/// A single model or a logit-fused ensemble: sum_s w_s * l_s(x).
struct Target {
  std::vector<const nn::Classifier*> models;
  std::vector<float> weights;

  static Target single(const nn::Classifier& m) { return {{&m}, {1.0f}}; }

  static Target uniform(std::vector<const nn::Classifier*> ms) {
    if (ms.empty()) throw ConfigError("ensemble: no models");
    std::vector<float> w(ms.size(), 1.0f / static_cast<float>(ms.size()));
    return {std::move(ms), std::move(w)};
  }

  /// w_s >= 0 and |sum w_s - 1| <= 1e-6, one weight per model.
  void validate() const {
    if (models.empty() || models.size() != weights.size()) {
      throw ConfigError("ensemble: need one weight per model (" + std::to_string(models.size()) +
                        " models, " + std::to_string(weights.size()) + " weights)");
    }
    double total = 0.0;
    for (float w : weights) {
      if (!(w >= 0.0f)) throw ConfigError("ensemble: negative weight");
      total += w;
    }
    if (std::fabs(total - 1.0) > 1e-6) {
      throw ConfigError("ensemble: weights sum to " + std::to_string(total) + ", expected 1");
    }
  }
};

/// Records sum_s w_s * l_s(x) on the tape. A lone weight-1 model is used as is.
inline ad::Var fused_logits(ad::Tape& tape, const Target& target, ad::Var x) {
  target.validate();
  if (target.models.size() == 1 && target.weights[0] == 1.0f) return target.models[0]->forward(tape, x);
  std::vector<ad::Var> parts;
  parts.reserve(target.models.size());
  for (const auto* m : target.models) parts.push_back(m->forward(tape, x));
  return ad::weighted_sum(tape, parts, target.weights);
}

inline Tensor ensemble_logits(const std::vector<const nn::Classifier*>& models,
                              const std::vector<float>& weights, const Tensor& x) {
  ad::Tape tape;
  return tape.value(fused_logits(tape, Target{models, weights}, tape.leaf_ref(x)));
}

/// Labels the loss is computed against: the true classes (untargeted,
/// ascend) or the target classes (targeted, descend).
struct AttackGoal {
  std::vector<std::size_t> labels;
  bool targeted = false;
};

/// (1/m) sum_{i=0}^{m-1} CE(f(x / 2^i), y), cross-entropy summed over the batch.
inline ad::Var sim_loss(ad::Tape& tape, const Target& target, ad::Var x,
                        const std::vector<std::size_t>& labels, std::size_t copies) {
  if (copies < 1) throw ConfigError("sim_loss: need at least one copy");
  std::vector<ad::Var> losses;
  for (std::size_t i = 0; i < copies; ++i) {
    ad::Var xi = i == 0 ? x : ad::affine(tape, x, std::ldexp(1.0f, -static_cast<int>(i)));
    losses.push_back(ad::softmax_cross_entropy(tape, fused_logits(tape, target, xi), labels, ad::Reduction::Sum));
  }
  if (copies == 1) return losses[0];
  return ad::weighted_sum(tape, losses, std::vector<float>(copies, 1.0f / static_cast<float>(copies)));
}

inline float sim_loss(const Target& target, const Tensor& x, const std::vector<std::size_t>& labels,
                      std::size_t copies) {
  ad::Tape tape;
  return tape.value(sim_loss(tape, target, tape.leaf_ref(x), labels, copies))[0];
}

/// Iterate of a sign-gradient attack.
struct AttackState {
  Tensor x_adv;
  Tensor momentum;          // g_t, zero-initialised
  std::size_t step = 0;
  std::size_t degenerate = 0;  // samples whose raw gradient was identically zero

  static AttackState start(const Tensor& x) { return {x, Tensor(x.shape()), 0, 0}; }
};

/// Gradient driving the next update:
///  * NI evaluates at x_adv + alpha * mu * g;
///  * DIM transforms the input (one draw per sample from `rng`) and is
///    differentiated through;
///  * SIM averages the loss over scale copies;
///  * TIM smooths the resulting input gradient;
///  * targeted goals return the negated gradient toward the target labels.
inline Tensor attack_gradient(const Target& target, const AttackState& state, const AttackGoal& goal,
                              const MethodConfig& config, float alpha, Rng& rng, float* loss = nullptr) {
  Tensor eval = state.x_adv;
  if (config.base == BaseMethod::NI && config.momentum > 0.0f) {
    const float lookahead = alpha * config.momentum;
    for (std::size_t i = 0; i < eval.size(); ++i) eval[i] += lookahead * state.momentum[i];
  }
  ad::Tape tape;
  const ad::Var x = tape.leaf_ref(eval, true);
  ad::Var in = x;
  if (config.dim) {
    std::vector<DimDraw> draws;
    bool any = false;
    for (std::size_t b = 0; b < eval.dim(0); ++b) {
      draws.push_back(draw_dim(eval.dim(2), *config.dim, rng));
      any = any || draws.back().applied;
    }
    if (any) {
      in = ad::index_map(tape, in, std::make_shared<const std::vector<std::int32_t>>(dim_index_map(eval.shape(), draws)));
    }
  }
  const ad::Var objective = sim_loss(tape, target, in, goal.labels, config.sim_copies);
  if (loss) *loss = tape.value(objective)[0];
  tape.backward(objective);
  Tensor grad = tape.grad(x);
  if (config.tim) grad = tim_smooth(grad, gaussian_kernel(config.tim->kernel, config.tim->sigma));
  if (goal.targeted) {
    for (float& v : grad.values()) v = -v;
  }
  return grad;
}

/// One update. With mu > 0: g <- mu * g + g_raw / ||g_raw||_1 per sample and
/// the step follows sign(g); with mu = 0 the step follows sign(g_raw).
/// A sample with an identically zero raw gradient keeps its position (its
/// momentum still decays) and is counted in `degenerate`.
/// The result is projected onto the eps-ball around `anchor`.
inline AttackState attack_step(AttackState state, const Tensor& raw_gradient, float alpha,
                               const MethodConfig& config, const Tensor& anchor, const AttackBudget& budget) {
  if (!(alpha >= 0.0f)) throw ConfigError("attack_step: step size must be non-negative");
  require_same_shape(state.x_adv, raw_gradient, "attack_step");
  const std::size_t n = raw_gradient.sample_size();
  Tensor moved = state.x_adv;
  for (std::size_t b = 0; b < raw_gradient.batch(); ++b) {
    auto raw = raw_gradient.sample(b);
    auto x = moved.sample(b);
    if (config.momentum > 0.0f) {
      double norm = 0.0;
      for (float v : raw) norm += std::fabs(static_cast<double>(v));
      auto g = state.momentum.sample(b);
      if (norm == 0.0) {
        for (float& v : g) v *= config.momentum;
        ++state.degenerate;
        continue;
      }
      const auto inv = static_cast<float>(norm);
      for (std::size_t i = 0; i < n; ++i) g[i] = config.momentum * g[i] + raw[i] / inv;
      for (std::size_t i = 0; i < n; ++i) {
        const float d = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
        x[i] = x[i] + alpha * d;
      }
    } else {
      bool zero = true;
      for (std::size_t i = 0; i < n; ++i) {
        const float d = raw[i] > 0.0f ? 1.0f : (raw[i] < 0.0f ? -1.0f : 0.0f);
        zero = zero && d == 0.0f;
        x[i] = x[i] + alpha * d;
      }
      if (zero) ++state.degenerate;
    }
  }
  state.x_adv = clip_to_ball(moved, anchor, budget);
  ++state.step;
  return state;
}

/// Called after every step with the step index (1-based) and the iterate.
using StepObserver = std::function<void(std::size_t, const AttackState&)>;

/// T applications of attack_gradient + attack_step starting from x.
inline Tensor run_attack(const Target& target, const Tensor& x, const AttackGoal& goal, const MethodConfig& config,
                         std::size_t steps, float alpha, const AttackBudget& budget, Rng& rng,
                         const StepObserver& observer = {}) {
  if (steps < 1) throw ConfigError("run_attack: need at least one step");
  budget.validate();
  config.validate();
  AttackState state = AttackState::start(x);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor grad = attack_gradient(target, state, goal, config, alpha, rng);
    state = attack_step(std::move(state), grad, alpha, config, x, budget);
    if (observer) observer(state.step, state);
  }
  return state.x_adv;
}

/// One-step x + eps * sign(grad J), projected to the pixel range.
inline Tensor fgsm_attack(const Target& target, const Tensor& x, const AttackGoal& goal, const AttackBudget& budget) {
  budget.validate();
  ad::Tape tape;
  const ad::Var in = tape.leaf_ref(x, true);
  tape.backward(ad::softmax_cross_entropy(tape, fused_logits(tape, target, in), goal.labels, ad::Reduction::Sum));
  Tensor dir = sign(tape.grad(in));
  if (goal.targeted) dir = scale(dir, -1.0f);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + budget.epsilon * dir[i];
  return clip_to_ball(out, x, budget);
}

}  // namespace metagrad::attack
