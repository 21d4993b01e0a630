#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "metagrad/core/tensor.hpp"
#include "metagrad/nn/classifier.hpp"

namespace metagrad::eval {

/// Per-image outcome: untargeted counts argmax != label, targeted counts
/// argmax == target.
inline std::vector<bool> fooled(const Tensor& adversarial, const std::vector<std::size_t>& labels,
                                const nn::Classifier& model, bool targeted,
                                const std::vector<std::size_t>* targets = nullptr, std::size_t chunk = 256) {
  if (adversarial.rank() != 4 || adversarial.dim(0) != labels.size()) {
    throw ShapeError("success_rate: " + std::to_string(labels.size()) + " labels for batch " +
                     to_string(adversarial.shape()));
  }
  if (targeted && (!targets || targets->size() != labels.size())) {
    throw ConfigError("success_rate: targeted evaluation needs one target label per image");
  }
  std::vector<bool> out(labels.size());
  const std::size_t n = adversarial.sample_size();
  for (std::size_t start = 0; start < labels.size(); start += chunk) {
    const std::size_t count = std::min(chunk, labels.size() - start);
    Shape s = adversarial.shape();
    s[0] = count;
    Tensor part(s, std::vector<float>(adversarial.data() + start * n, adversarial.data() + (start + count) * n));
    const auto pred = model.predict(part);
    for (std::size_t i = 0; i < count; ++i) {
      out[start + i] = targeted ? pred[i] == (*targets)[start + i] : pred[i] != labels[start + i];
    }
  }
  return out;
}

inline double success_rate(const Tensor& adversarial, const std::vector<std::size_t>& labels,
                           const nn::Classifier& model, bool targeted,
                           const std::vector<std::size_t>* targets = nullptr) {
  const auto f = fooled(adversarial, labels, model, targeted, targets);
  if (f.empty()) return 0.0;
  std::size_t k = 0;
  for (bool b : f) k += b;
  return static_cast<double>(k) / static_cast<double>(f.size());
}

/// Norms of one perturbation; L1 and L2 also divided by the element count.
struct PerturbationNorms {
  double linf = 0, l1 = 0, l2 = 0;          // per-element means for l1/l2
  double l1_raw = 0, l2_raw = 0;
};

inline PerturbationNorms perturbation_norms(std::span<const float> adv, std::span<const float> benign) {
  PerturbationNorms p;
  double sq = 0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double d = std::fabs(static_cast<double>(adv[i]) - static_cast<double>(benign[i]));
    p.linf = std::max(p.linf, d);
    p.l1_raw += d;
    sq += d * d;
  }
  p.l2_raw = std::sqrt(sq);
  const auto n = static_cast<double>(adv.size());
  p.l1 = p.l1_raw / n;
  p.l2 = p.l2_raw / n;
  return p;
}

inline double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return std::nan("");
  return dot / std::sqrt(na * nb);
}

struct CosineResult {
  std::vector<double> mean;  // one per model
  std::size_t used = 0;
  std::size_t skipped = 0;   // zero perturbation or zero gradient
};

/// Mean over images of cos(adv - benign, grad_x CE(model(benign), y)).
/// Images are skipped when either vector is zero for any model.
inline CosineResult cosine_analysis(const Tensor& adversarial, const Tensor& benign,
                                    const std::vector<std::size_t>& labels,
                                    const std::vector<const nn::Classifier*>& models) {
  require_same_shape(adversarial, benign, "cosine_analysis");
  const Tensor perturbation = subtract(adversarial, benign);
  std::vector<Tensor> grads;
  for (const auto* m : models) grads.push_back(m->input_gradient(benign, labels));
  CosineResult r;
  r.mean.assign(models.size(), 0.0);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    std::vector<double> c;
    for (const auto& g : grads) c.push_back(cosine(perturbation.sample(b), g.sample(b)));
    if (std::any_of(c.begin(), c.end(), [](double v) { return std::isnan(v); })) {
      ++r.skipped;
      continue;
    }
    for (std::size_t k = 0; k < c.size(); ++k) r.mean[k] += c[k];
    ++r.used;
  }
  for (double& v : r.mean) v = r.used ? v / static_cast<double>(r.used) : std::nan("");
  return r;
}

/// Smallest succeeding budget found by bisection over (0, eps_max].
/// `succeeds` must be monotone for the result to be meaningful.
struct Bisection {
  bool censored = false;  // no success at eps_max
  float epsilon = 0;
};

inline Bisection bisect_min_epsilon(const std::function<bool(float)>& succeeds, float eps_max, std::size_t iterations) {
  if (!(eps_max > 0.0f)) throw ConfigError("min_noise_search: eps_max must be positive");
  if (!succeeds(eps_max)) return {true, eps_max};
  float lo = 0.0f, hi = eps_max;
  for (std::size_t i = 0; i < iterations; ++i) {
    const float mid = 0.5f * (lo + hi);
    (succeeds(mid) ? hi : lo) = mid;
  }
  return {false, hi};
}

struct MinNoiseResult {
  bool censored = false;
  float epsilon = 0;
  PerturbationNorms norms;
};

/// attack(eps) -> adversarial image; judge(adv) -> fooled. An image already
/// fooled unperturbed reports zero. Norms are those of the perturbation at
/// the smallest succeeding eps.
inline MinNoiseResult min_noise_search(const Tensor& image, const std::function<Tensor(float)>& attack,
                                       const std::function<bool(const Tensor&)>& judge, float eps_max,
                                       std::size_t iterations) {
  MinNoiseResult out;
  if (judge(image)) return out;
  std::optional<Tensor> best;
  float best_eps = 0;
  const Bisection b = bisect_min_epsilon(
      [&](float eps) {
        Tensor adv = attack(eps);
        if (!judge(adv)) return false;
        if (!best || eps < best_eps) {
          best = std::move(adv);
          best_eps = eps;
        }
        return true;
      },
      eps_max, iterations);
  out.censored = b.censored;
  out.epsilon = b.epsilon;
  if (!b.censored) out.norms = perturbation_norms(best->values(), image.values());
  return out;
}

}  // namespace metagrad::eval
