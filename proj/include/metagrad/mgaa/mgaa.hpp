#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "metagrad/attack/gradient.hpp"
#include "metagrad/nn/zoo.hpp"

namespace metagrad::mgaa {

using attack::AttackBudget;
using attack::AttackGoal;
using attack::MethodConfig;

struct MgaaConfig {
  std::size_t tasks = 40;        // T
  std::size_t inner_steps = 5;   // K
  std::size_t ensemble = 5;      // n
  float alpha = 1.0f;            // meta-train step
  float beta = 8.0f / 40.0f;     // meta-test step, eps / T
  AttackBudget budget{};
  MethodConfig method = attack::mim();
  bool targeted = false;
  std::uint64_t seed = 0;
  bool strict_meta_train = false;  // plain sign-gradient inner loop, host momentum off

  /// Defaults for a budget: beta = eps / T.
  static MgaaConfig defaults(float epsilon = 8.0f, MethodConfig method = attack::mim()) {
    MgaaConfig c;
    c.budget.epsilon = epsilon;
    c.method = std::move(method);
    c.beta = epsilon / static_cast<float>(c.tasks);
    return c;
  }

  void validate(std::size_t white_box_models, bool allow_no_meta_train = false) const {
    budget.validate();
    method.validate();
    if (tasks < 1) throw ConfigError("mgaa: tasks T must be at least 1");
    if (inner_steps < 1 && !allow_no_meta_train) throw ConfigError("mgaa: inner steps K must be at least 1");
    if (ensemble < 1) throw ConfigError("mgaa: ensemble size n must be at least 1");
    if (!(alpha > 0.0f) && !allow_no_meta_train) throw ConfigError("mgaa: alpha must be positive");
    if (!(beta > 0.0f)) throw ConfigError("mgaa: beta must be positive");
    if (ensemble + 1 > white_box_models) {
      throw ConfigError("mgaa: n+1 = " + std::to_string(ensemble + 1) + " exceeds the " +
                        std::to_string(white_box_models) + " white-box models");
    }
  }
};

inline nlohmann::json to_json(const MethodConfig& m) {
  nlohmann::json j{{"name", m.name()}, {"momentum", m.momentum}, {"sim_copies", m.sim_copies}};
  j["base"] = m.base == attack::BaseMethod::FGSM ? "fgsm"
              : m.base == attack::BaseMethod::BIM ? "bim"
              : m.base == attack::BaseMethod::MIM ? "mim"
                                                  : "ni";
  j["dim"] = m.dim ? nlohmann::json{{"probability", m.dim->probability}, {"min_fraction", m.dim->min_fraction}}
                   : nlohmann::json(nullptr);
  j["tim"] = m.tim ? nlohmann::json{{"kernel", m.tim->kernel}, {"sigma", m.tim->sigma}} : nlohmann::json(nullptr);
  return j;
}

inline MethodConfig method_from_json(const nlohmann::json& j) {
  MethodConfig m = attack::parse_method(j.at("base").get<std::string>());
  m.momentum = j.at("momentum").get<float>();
  m.sim_copies = j.at("sim_copies").get<std::size_t>();
  if (!j.at("dim").is_null()) {
    m.dim = attack::DimTransform{j["dim"].at("probability").get<float>(), j["dim"].at("min_fraction").get<float>()};
  }
  if (!j.at("tim").is_null()) {
    m.tim = attack::TimSmoothing{j["tim"].at("kernel").get<std::size_t>(), j["tim"].at("sigma").get<float>()};
  }
  m.validate();
  return m;
}

inline nlohmann::json to_json(const MgaaConfig& c) {
  return {{"T", c.tasks},
          {"K", c.inner_steps},
          {"n", c.ensemble},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"epsilon", c.budget.epsilon},
          {"method", to_json(c.method)},
          {"targeted", c.targeted},
          {"seed", c.seed},
          {"strict_meta_train", c.strict_meta_train},
          {"meta_train_projection", "benign-anchor eps-ball after every inner step"},
          {"momentum_scope", c.strict_meta_train ? "none" : "meta-train only, reset per task"},
          {"ensemble_weights", "equal 1/n"},
          {"dim_draws", "fresh per gradient evaluation"},
          {"task_sampling", "without replacement within a task, with replacement across tasks"}};
}

struct MetaTask {
  std::vector<std::size_t> train_indices;  // k_1..k_n
  std::size_t test_index = 0;              // k_{n+1}
  std::vector<float> weights;
};

/// n+1 distinct white-box models, uniformly without replacement; the last
/// one drawn is held out for meta-test.
inline MetaTask sample_task(const std::vector<std::size_t>& white_box, std::size_t n, Rng& rng) {
  if (n < 1 || n + 1 > white_box.size()) {
    throw ConfigError("sample_task: need n+1 = " + std::to_string(n + 1) + " models, pool has " +
                      std::to_string(white_box.size()));
  }
  std::vector<std::size_t> pool = white_box;
  for (std::size_t i = 0; i <= n; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size() - 1)));
    std::swap(pool[i], pool[j]);
  }
  MetaTask t;
  t.train_indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
  t.test_index = pool[n];
  t.weights.assign(n, 1.0f / static_cast<float>(n));
  return t;
}

inline MetaTask sample_task(const nn::ModelZoo& zoo, std::size_t n, Rng& rng) {
  return sample_task(zoo.white_box(), n, rng);
}

struct MetaTrainResult {
  Tensor x;         // x_{i,K}
  Tensor momentum;  // accumulator after the last inner step
  float loss = 0;   // ensemble loss at the last inner evaluation
  std::size_t degenerate = 0;
};

/// K ensemble steps from x_{i,0} = x_i, each projected onto the eps-ball
/// around the benign anchor. Momentum starts at zero for every task.
inline MetaTrainResult meta_train(const Tensor& x_i, const Tensor& anchor, const MetaTask& task,
                                  const nn::ModelZoo& zoo, std::size_t K, float alpha, const MethodConfig& method,
                                  const AttackGoal& goal, const AttackBudget& budget, Rng& rng,
                                  const attack::StepObserver& observer = {}) {
  const attack::Target target{zoo.pointers(task.train_indices), task.weights};
  attack::AttackState state = attack::AttackState::start(x_i);
  MetaTrainResult out;
  for (std::size_t j = 0; j < K; ++j) {
    const Tensor grad = attack::attack_gradient(target, state, goal, method, alpha, rng, &out.loss);
    state = attack::attack_step(std::move(state), grad, alpha, method, anchor, budget);
    if (observer) observer(j, state);
  }
  out.x = std::move(state.x_adv);
  out.momentum = std::move(state.momentum);
  out.degenerate = state.degenerate;
  return out;
}

struct MetaTestResult {
  Tensor x;      // x_{i,mt}
  Tensor delta;  // beta * sign(grad), exactly x_{i,mt} - x_{i,K} in real arithmetic
  float loss = 0;
};

/// One momentum-free sign step of size beta against the held-out model,
/// keeping the method's input/gradient transforms. No projection here.
inline MetaTestResult meta_test(const Tensor& x_K, const nn::Classifier& test_model, float beta,
                                const MethodConfig& method, const AttackGoal& goal, Rng& rng) {
  MethodConfig plain = method;
  plain.momentum = 0.0f;
  const attack::AttackState state = attack::AttackState::start(x_K);
  MetaTestResult out;
  const Tensor grad = attack::attack_gradient(attack::Target::single(test_model), state, goal, plain, beta, rng, &out.loss);
  out.delta = Tensor(x_K.shape());
  out.x = x_K;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const float d = grad[i] > 0.0f ? 1.0f : (grad[i] < 0.0f ? -1.0f : 0.0f);
    out.delta[i] = beta * d;
    out.x[i] = out.x[i] + out.delta[i];
  }
  return out;
}

/// x_{i+1} = clip(x_i + delta).
inline Tensor transfer_delta(const Tensor& x_i, const Tensor& delta, const Tensor& anchor, const AttackBudget& budget) {
  require_same_shape(x_i, delta, "perturbation_transfer");
  Tensor out = x_i;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + delta[i];
  return attack::clip_to_ball(out, anchor, budget);
}

/// x_{i+1} = clip(x_i + (x_{i,mt} - x_{i,K})).
inline Tensor perturbation_transfer(const Tensor& x_i, const Tensor& x_K, const Tensor& x_mt, const Tensor& anchor,
                                    const AttackBudget& budget) {
  require_same_shape(x_K, x_mt, "perturbation_transfer");
  return transfer_delta(x_i, subtract(x_mt, x_K), anchor, budget);
}

struct TaskRecord {
  MetaTask task;
  float delta_linf = 0;
  float meta_train_loss = 0;
  float meta_test_loss = 0;
};

struct MgaaTrace {
  std::vector<TaskRecord> tasks;
  std::size_t degenerate = 0;
  Tensor adversarial;
};

/// Random streams of one image: task sampling and transform draws are
/// independent so toggling DIM leaves the task sequence unchanged.
struct Streams {
  Rng tasks;
  Rng transforms;
  static Streams of(std::uint64_t seed, std::uint64_t image) {
    return {Rng::derive(seed, image, 0), Rng::derive(seed, image, 1)};
  }
};

/// Called once per task with the task index, x_{i,K} and x_{i+1}.
using TaskObserver = std::function<void(std::size_t, const Tensor&, const Tensor&)>;

namespace detail {

inline MgaaTrace run(const Tensor& x, const AttackGoal& goal, const nn::ModelZoo& zoo, const MgaaConfig& cfg,
                     std::uint64_t image, bool meta_train_enabled, const TaskObserver& observer,
                     const attack::StepObserver& inner_observer) {
  cfg.validate(zoo.white_box().size(), !meta_train_enabled);
  if (cfg.targeted != goal.targeted) throw ConfigError("mgaa: config and goal disagree on targeted mode");
  MethodConfig inner = cfg.method;
  if (cfg.strict_meta_train) inner.momentum = 0.0f;
  Streams rng = Streams::of(cfg.seed, image);
  MgaaTrace trace;
  Tensor xi = x;
  for (std::size_t i = 0; i < cfg.tasks; ++i) {
    TaskRecord rec;
    rec.task = sample_task(zoo, cfg.ensemble, rng.tasks);
    Tensor xK = xi;
    if (meta_train_enabled && cfg.inner_steps > 0) {
      MetaTrainResult mt = meta_train(xi, x, rec.task, zoo, cfg.inner_steps, cfg.alpha, inner, goal, cfg.budget,
                                      rng.transforms, inner_observer);
      xK = std::move(mt.x);
      rec.meta_train_loss = mt.loss;
      trace.degenerate += mt.degenerate;
    }
    const MetaTestResult test = meta_test(xK, zoo[rec.task.test_index], cfg.beta, cfg.method, goal, rng.transforms);
    rec.meta_test_loss = test.loss;
    rec.delta_linf = linf_norm(test.delta.values());
    Tensor next = transfer_delta(xi, test.delta, x, cfg.budget);
    if (observer) observer(i, xK, next);
    xi = std::move(next);
    trace.tasks.push_back(std::move(rec));
  }
  trace.adversarial = std::move(xi);
  return trace;
}

}  // namespace detail

/// Meta gradient adversarial attack on one image (or a batch sharing the task sequence), with
/// random streams derived from (cfg.seed, image).
inline MgaaTrace mgaa_attack(const Tensor& x, const AttackGoal& goal, const nn::ModelZoo& zoo, const MgaaConfig& cfg,
                             std::uint64_t image = 0, const TaskObserver& observer = {},
                             const attack::StepObserver& inner_observer = {}) {
  return detail::run(x, goal, zoo, cfg, image, true, observer, inner_observer);
}

/// Per task, a single beta-step against one randomly drawn white-box model.
inline MgaaTrace mgaa_without_meta_train(const Tensor& x, const AttackGoal& goal, const nn::ModelZoo& zoo,
                                         const MgaaConfig& cfg, std::uint64_t image = 0,
                                         const TaskObserver& observer = {}) {
  return detail::run(x, goal, zoo, cfg, image, false, observer, {});
}

/// run_attack against the equal-weight fusion of every white-box model,
/// T steps of size eps / T.
inline Tensor ensemble_baseline(const Tensor& x, const AttackGoal& goal, const nn::ModelZoo& zoo,
                                const MethodConfig& method, std::size_t steps, const AttackBudget& budget,
                                std::uint64_t seed = 0, std::uint64_t image = 0,
                                const attack::StepObserver& observer = {}) {
  Streams rng = Streams::of(seed, image);
  const attack::Target target = attack::Target::uniform(zoo.pointers(zoo.white_box()));
  return attack::run_attack(target, x, goal, method, steps, budget.epsilon / static_cast<float>(steps), budget,
                            rng.transforms, observer);
}

}  // namespace metagrad::mgaa
