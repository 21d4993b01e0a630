#pragma once

#include <chrono>
#include <mutex>
#include <optional>
#include <functional>
#include <string>
#include <vector>

#include "metagrad/eval/dataset.hpp"
#include "metagrad/eval/metrics.hpp"
#include "metagrad/eval/parallel.hpp"
#include "metagrad/eval/results.hpp"
#include "metagrad/mgaa/mgaa.hpp"

namespace metagrad::eval {

// --------------------------------------------------------------- zoo training

struct ZooTrainingOptions {
  nn::TrainOptions train{30, 0.03f, 0.9f, 0.05f, 32, 0, 0};
  float adv_epsilon = 4.0f;
  double accuracy_floor = 0.95;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;
};

class AccuracyFloorError : public DataError {
 public:
  using DataError::DataError;
};

/// Trains every blueprint (models in parallel), records held-out accuracy
/// and enforces the accuracy floor.
inline nn::ModelZoo train_zoo(const std::vector<nn::ZooBlueprint>& blueprints, const nn::LabeledSet& train,
                              const nn::LabeledSet& test, const ZooTrainingOptions& opt, std::size_t workers = 1,
                              const std::function<void(const nn::Classifier&)>& on_trained = {}) {
  std::vector<std::optional<nn::Classifier>> slots(blueprints.size());
  std::mutex log_mutex;
  parallel_for(blueprints.size(), workers, [&](std::size_t i) {
    const auto& bp = blueprints[i];
    nn::TrainOptions to = opt.train;
    to.seed = mix64(opt.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
    to.data_seed = opt.data_seed;
    nn::Classifier m = nn::build(bp.spec, to.seed);
    m = bp.adversarial ? nn::adv_train(std::move(m), train, opt.adv_epsilon, to, &test)
                       : nn::train(std::move(m), train, to, &test);
    if (on_trained) {
      std::lock_guard lock(log_mutex);
      on_trained(m);
    }
    slots[i] = std::move(m);
  });
  std::vector<nn::Classifier> models;
  std::vector<std::size_t> white, black;
  for (std::size_t i = 0; i < blueprints.size(); ++i) {
    if (slots[i]->record().accuracy < opt.accuracy_floor) {
      throw AccuracyFloorError("zoo: model '" + slots[i]->name() + "' reached " +
                               std::to_string(slots[i]->record().accuracy) + " held-out accuracy, below the floor " +
                               std::to_string(opt.accuracy_floor));
    }
    (blueprints[i].role == nn::ModelRole::WhiteBox ? white : black).push_back(i);
    models.push_back(std::move(*slots[i]));
  }
  return nn::ModelZoo(std::move(models), std::move(white), std::move(black));
}

// ------------------------------------------------------------ attack plans

enum class Mode { Baseline, Mgaa, NoMetaTrain };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Baseline: return "off";
    case Mode::Mgaa: return "on";
    case Mode::NoMetaTrain: return "w/o-meta-train";
  }
  return "?";
}

/// What to run over a dataset. Baselines reuse cfg.method, cfg.budget, the
/// seed and cfg.tasks as their step count.
struct AttackPlan {
  Mode mode = Mode::Mgaa;
  mgaa::MgaaConfig cfg = mgaa::MgaaConfig::defaults();
  std::string mgaa_label;  // overrides mode_name in result rows when set

  std::string label() const { return mgaa_label.empty() ? mode_name(mode) : mgaa_label; }

  static AttackPlan baseline(mgaa::MgaaConfig c) { return {Mode::Baseline, std::move(c), {}}; }
  static AttackPlan full(mgaa::MgaaConfig c) { return {Mode::Mgaa, std::move(c), {}}; }
  static AttackPlan without_meta_train(mgaa::MgaaConfig c) { return {Mode::NoMetaTrain, std::move(c), {}}; }
};

/// Sets eps and rescales beta = eps / T.
inline mgaa::MgaaConfig with_epsilon(mgaa::MgaaConfig c, float epsilon) {
  c.budget.epsilon = epsilon;
  c.beta = epsilon / static_cast<float>(c.tasks);
  return c;
}

inline attack::AttackGoal goal_for(const EvalDataset& data, std::size_t i, bool targeted) {
  if (targeted && !data.has_targets()) throw ConfigError("targeted attack on a dataset without target labels");
  return {{targeted ? data.targets[i] : data.labels[i]}, targeted};
}

/// Adversarial version of image i under the plan. eps = 0 returns the image.
inline Tensor attack_image(const EvalDataset& data, std::size_t i, const nn::ModelZoo& zoo, const AttackPlan& plan) {
  const Tensor x = data.image(i);
  if (plan.cfg.budget.epsilon == 0.0f) return x;
  const auto goal = goal_for(data, i, plan.cfg.targeted);
  const std::uint64_t id = data.ids[i];
  switch (plan.mode) {
    case Mode::Baseline:
      return mgaa::ensemble_baseline(x, goal, zoo, plan.cfg.method, plan.cfg.tasks, plan.cfg.budget, plan.cfg.seed, id);
    case Mode::Mgaa: return mgaa::mgaa_attack(x, goal, zoo, plan.cfg, id).adversarial;
    case Mode::NoMetaTrain: return mgaa::mgaa_without_meta_train(x, goal, zoo, plan.cfg, id).adversarial;
  }
  return x;
}

struct Generated {
  Tensor adversarial;
  double wall_ms = 0;
};

inline Generated generate(const EvalDataset& data, const nn::ModelZoo& zoo, const AttackPlan& plan,
                          std::size_t workers) {
  const auto t0 = std::chrono::steady_clock::now();
  Tensor out(data.images.shape());
  const std::size_t n = data.images.sample_size();
  parallel_for(data.size(), workers, [&](std::size_t i) {
    const Tensor adv = attack_image(data, i, zoo, plan);
    if (plan.cfg.budget.epsilon > 0.0f && !attack::within_ball(adv, data.image(i), plan.cfg.budget)) {
      throw NumericalError("attack output for image " + std::to_string(data.ids[i]) + " left the eps-ball");
    }
    std::copy(adv.values().begin(), adv.values().end(), out.data() + i * n);
  });
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(out), ms};
}

inline std::string method_label(const AttackPlan& plan) { return plan.cfg.method.name(); }

/// One row per zoo model for an adversarial batch.
inline ResultTable evaluate_rows(const EvalDataset& data, const Tensor& adversarial, const nn::ModelZoo& zoo,
                                 const AttackPlan& plan, const std::string& run_id, double wall_ms) {
  PerturbationNorms mean;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = perturbation_norms(adversarial.sample(i), data.images.sample(i));
    mean.linf += p.linf;
    mean.l1 += p.l1;
    mean.l2 += p.l2;
    mean.l1_raw += p.l1_raw;
    mean.l2_raw += p.l2_raw;
  }
  const double count = data.size() ? static_cast<double>(data.size()) : 1.0;
  ResultTable t;
  for (std::size_t m = 0; m < zoo.size(); ++m) {
    ResultRow r;
    r.run_id = run_id;
    r.method = method_label(plan);
    r.mgaa = plan.label();
    r.model = zoo[m].name();
    r.model_role = nn::role_name(zoo.role(m));
    r.epsilon = plan.cfg.budget.epsilon;
    r.T = plan.cfg.tasks;
    r.K = plan.mode == Mode::Mgaa ? plan.cfg.inner_steps : 0;
    r.n = plan.mode == Mode::Baseline ? zoo.white_box().size() : plan.cfg.ensemble;
    r.success_rate = success_rate(adversarial, data.labels, zoo[m], plan.cfg.targeted,
                                  plan.cfg.targeted ? &data.targets : nullptr);
    r.mean_linf = mean.linf / count;
    r.mean_l1 = mean.l1 / count;
    r.mean_l2 = mean.l2 / count;
    r.mean_l1_raw = mean.l1_raw / count;
    r.mean_l2_raw = mean.l2_raw / count;
    r.wall_ms = wall_ms;
    r.seed = plan.cfg.seed;
    r.images = data.size();
    t.rows.push_back(std::move(r));
  }
  return t;
}

struct Harness {
  const EvalDataset& data;
  const nn::ModelZoo& zoo;
  std::size_t workers = 1;
  std::string prefix = "run";
  std::function<void(const std::string&)> log = {};

  void note(const std::string& s) const {
    if (log) log(s);
  }

  std::string run_id(const std::string& tail) const { return prefix + "/" + tail; }

  ResultTable run(const AttackPlan& plan, const std::string& tail, Tensor* adversarial = nullptr) const {
    const Generated g = generate(data, zoo, plan, workers);
    note(run_id(tail) + " done in " + std::to_string(static_cast<long long>(g.wall_ms)) + " ms");
    if (adversarial) *adversarial = g.adversarial;
    return evaluate_rows(data, g.adversarial, zoo, plan, run_id(tail), g.wall_ms);
  }
};

inline std::string num(double v) { return detail::shortest(v); }

inline std::string plan_tag(const AttackPlan& p) {
  return p.cfg.method.name() + (p.mode == Mode::Baseline ? "" : "-" + p.label());
}

/// Success grid over eps for each plan; beta rescaled per eps.
inline ResultTable budget_sweep(const Harness& h, const std::vector<AttackPlan>& plans,
                                const std::vector<float>& eps_list) {
  if (!std::is_sorted(eps_list.begin(), eps_list.end())) throw ConfigError("budget_sweep: eps list must ascend");
  ResultTable t;
  for (float eps : eps_list) {
    for (const auto& base : plans) {
      AttackPlan p = base;
      p.cfg = with_epsilon(p.cfg, eps);
      t.append(h.run(p, "eps" + num(eps) + "/" + plan_tag(p)));
    }
  }
  return t;
}

/// Sweep of one of K, T, n. For T, beta = eps / T.
inline ResultTable hyperparam_sweep(const Harness& h, const AttackPlan& base, char dimension,
                                    const std::vector<std::size_t>& values) {
  ResultTable t;
  for (std::size_t v : values) {
    AttackPlan p = base;
    switch (dimension) {
      case 'K': p.cfg.inner_steps = v; break;
      case 'T':
        p.cfg.tasks = v;
        p.cfg = with_epsilon(p.cfg, p.cfg.budget.epsilon);
        break;
      case 'n': p.cfg.ensemble = v; break;
      default: throw ConfigError(std::string("hyperparam_sweep: unknown dimension '") + dimension + "'");
    }
    p.cfg.validate(h.zoo.white_box().size());
    t.append(h.run(p, std::string(1, dimension) + std::to_string(v) + "/" + plan_tag(p)));
  }
  return t;
}

/// Full MGAA, MGAA without meta-test (the ensemble baseline) and MGAA
/// without meta-train, on the same images and seed.
inline ResultTable ablation(const Harness& h, const mgaa::MgaaConfig& cfg) {
  ResultTable t;
  AttackPlan no_test = AttackPlan::baseline(cfg);
  no_test.mgaa_label = "w/o-meta-test";
  t.append(h.run(AttackPlan::full(cfg), "ablation/full"));
  t.append(h.run(no_test, "ablation/w-o-meta-test"));
  t.append(h.run(AttackPlan::without_meta_train(cfg), "ablation/w-o-meta-train"));
  return t;
}

/// Rows per plan and black-box model carrying the mean cosine between the
/// perturbation and that model's benign input gradient.
inline ResultTable cosine_table(const Harness& h, const std::vector<AttackPlan>& plans) {
  ResultTable t;
  const auto black = h.zoo.pointers(h.zoo.black_box());
  for (const auto& p : plans) {
    Tensor adv;
    ResultTable rows = h.run(p, "cosine/" + plan_tag(p), &adv);
    const CosineResult c = cosine_analysis(adv, h.data.images, h.data.labels, black);
    for (auto& r : rows.rows) {
      for (std::size_t k = 0; k < black.size(); ++k) {
        if (r.model == black[k]->name()) {
          r.cosine = c.mean[k];
          r.images = c.used;
          r.censored = c.skipped;
          t.rows.push_back(r);
        }
      }
    }
  }
  return t;
}

/// Minimum-noise search per plan: success means fooling every judge model
/// (all black-box models by default). Rows carry the mean norms over
/// uncensored images, the censored count and the uncensored fraction as
/// success_rate; epsilon is eps_max and model is "black-box".
inline ResultTable min_noise_table(const Harness& h, const std::vector<AttackPlan>& plans, float eps_max,
                                   std::size_t iterations) {
  ResultTable t;
  const auto judges = h.zoo.pointers(h.zoo.black_box());
  for (const auto& base : plans) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<MinNoiseResult> res(h.data.size());
    parallel_for(h.data.size(), h.workers, [&](std::size_t i) {
      const Tensor x = h.data.image(i);
      const auto goal = goal_for(h.data, i, base.cfg.targeted);
      res[i] = min_noise_search(
          x,
          [&](float eps) {
            AttackPlan p = base;
            p.cfg = with_epsilon(p.cfg, eps);
            return attack_image(h.data, i, h.zoo, p);
          },
          [&](const Tensor& adv) {
            for (const auto* m : judges) {
              const std::size_t pred = m->predict(adv)[0];
              if (goal.targeted ? pred != goal.labels[0] : pred == goal.labels[0]) return false;
            }
            return true;
          },
          eps_max, iterations);
    });
    ResultRow r;
    r.run_id = h.run_id("min-noise/" + plan_tag(base));
    r.method = method_label(base);
    r.mgaa = base.label();
    r.model = "black-box";
    r.model_role = "black";
    r.epsilon = eps_max;
    r.T = base.cfg.tasks;
    r.K = base.mode == Mode::Mgaa ? base.cfg.inner_steps : 0;
    r.n = base.mode == Mode::Baseline ? h.zoo.white_box().size() : base.cfg.ensemble;
    r.seed = base.cfg.seed;
    r.images = h.data.size();
    std::size_t censored = 0;
    double l1_raw = 0, l2_raw = 0;
    for (const auto& m : res) {
      if (m.censored) {
        ++censored;
        continue;
      }
      r.mean_linf += m.norms.linf;
      r.mean_l1 += m.norms.l1;
      r.mean_l2 += m.norms.l2;
      l1_raw += m.norms.l1_raw;
      l2_raw += m.norms.l2_raw;
    }
    const std::size_t used = res.size() - censored;
    const double div = used ? static_cast<double>(used) : 1.0;
    r.mean_linf /= div;
    r.mean_l1 /= div;
    r.mean_l2 /= div;
    r.mean_l1_raw = l1_raw / div;
    r.mean_l2_raw = l2_raw / div;
    r.censored = censored;
    r.success_rate = res.empty() ? 0.0 : static_cast<double>(used) / static_cast<double>(res.size());
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    h.note(r.run_id + " done");
    t.rows.push_back(std::move(r));
  }
  return t;
}

}  // namespace metagrad::eval
