#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "metagrad/core/error.hpp"

namespace metagrad::attack {

/// Update rule family. FGSM/BIM/MIM share one step function and differ
/// only in step count, step size and momentum; NI additionally evaluates
/// the gradient at the Nesterov look-ahead point.
enum class BaseMethod { FGSM, BIM, MIM, NI };

/// Random resize-and-pad of the input before each gradient evaluation.
struct DimTransform {
  float probability = 0.7f;
  float min_fraction = 0.9f;  // smallest resized side as a fraction of the input side
};

/// Gaussian smoothing of the raw gradient.
struct TimSmoothing {
  std::size_t kernel = 7;
  float sigma = 7.0f / 3.0f;
};

struct MethodConfig {
  BaseMethod base = BaseMethod::MIM;
  std::optional<DimTransform> dim;
  std::optional<TimSmoothing> tim;
  std::size_t sim_copies = 1;  // scale copies x / 2^i, i = 0..m-1
  float momentum = 1.0f;       // decay mu; 0 disables the momentum buffer

  void validate() const {
    if (dim && (dim->probability < 0.0f || dim->probability > 1.0f)) {
      throw ConfigError("method: DIM probability must lie in [0,1]");
    }
    if (dim && (dim->min_fraction <= 0.0f || dim->min_fraction > 1.0f)) {
      throw ConfigError("method: DIM min_fraction must lie in (0,1]");
    }
    if (tim && (tim->kernel % 2 == 0)) throw ConfigError("method: TIM kernel size must be odd");
    if (tim && !(tim->sigma > 0.0f)) throw ConfigError("method: TIM sigma must be positive");
    if (sim_copies < 1) throw ConfigError("method: SIM needs at least one copy");
    if (momentum < 0.0f) throw ConfigError("method: momentum decay must be non-negative");
  }

  /// Short name in the same vocabulary parse() accepts when it matches a
  /// preset; otherwise a descriptive composite.
  std::string name() const;
};

inline MethodConfig fgsm() { return {BaseMethod::FGSM, {}, {}, 1, 0.0f}; }
inline MethodConfig bim() { return {BaseMethod::BIM, {}, {}, 1, 0.0f}; }
inline MethodConfig mim(float mu = 1.0f) { return {BaseMethod::MIM, {}, {}, 1, mu}; }
inline MethodConfig ni(float mu = 1.0f) { return {BaseMethod::NI, {}, {}, 1, mu}; }

/// DIM in its momentum form (as it is run in ensemble baselines).
inline MethodConfig dim(float mu = 1.0f) {
  MethodConfig m = mim(mu);
  m.dim = DimTransform{};
  return m;
}

inline MethodConfig tim(float mu = 1.0f) {
  MethodConfig m = mim(mu);
  m.tim = TimSmoothing{};
  return m;
}

inline MethodConfig ti_dim(float mu = 1.0f) {
  MethodConfig m = dim(mu);
  m.tim = TimSmoothing{};
  return m;
}

inline MethodConfig si_ni(std::size_t copies = 5, float mu = 1.0f) {
  MethodConfig m = ni(mu);
  m.sim_copies = copies;
  return m;
}

/// Accepts: fgsm, bim, mim, ni, dim, tim, ti-dim, si-ni.
inline MethodConfig parse_method(const std::string& name) {
  if (name == "fgsm") return fgsm();
  if (name == "bim") return bim();
  if (name == "mim") return mim();
  if (name == "ni" || name == "ni-fgsm") return ni();
  if (name == "dim") return dim();
  if (name == "tim") return tim();
  if (name == "ti-dim" || name == "tidim") return ti_dim();
  if (name == "si-ni" || name == "sini") return si_ni();
  throw ConfigError("unknown attack method '" + name + "' (expected fgsm, bim, mim, ni, dim, tim, ti-dim, si-ni)");
}

inline std::string MethodConfig::name() const {
  std::string n;
  switch (base) {
    case BaseMethod::FGSM: n = "fgsm"; break;
    case BaseMethod::BIM: n = "bim"; break;
    case BaseMethod::MIM: n = "mim"; break;
    case BaseMethod::NI: n = "ni"; break;
  }
  if (base == BaseMethod::MIM && (dim || tim)) {
    n = tim && dim ? "ti-dim" : (dim ? "dim" : "tim");
  } else {
    if (tim) n = "ti-" + n;
    if (dim) n += "+dim";
  }
  if (sim_copies > 1) n = (base == BaseMethod::NI && !dim && !tim ? "si-" : "si" + std::to_string(sim_copies) + "-") + n;
  return n;
}

}  // namespace metagrad::attack
