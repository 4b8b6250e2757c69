#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>

#include "lfi/core/error.hpp"
#include "lfi/core/tape.hpp"

namespace lfi {

/// Builds a scalar loss on `tape` from the parameters in `store`.
using LossBuilder = std::function<Var(Tape& tape, const ParameterStore& store)>;

struct GradCheckOptions {
  double step = 1e-5;
  Mode mode = Mode::eval;
  std::uint64_t seed = 0;  ///< dropout RngState, identical for every evaluation
};

inline double evaluate_loss(const LossBuilder& f, const ParameterStore& store, const GradCheckOptions& opt) {
  Tape tape(opt.mode, opt.seed, false);
  const double v = f(tape, store).value()[0];
  if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss");
  return v;
}

/// Compares reverse-mode gradients with central differences.
///
/// Returns max over parameter tensors of ||g_ad - g_fd||_inf / (||g_fd||_inf + 1e-12).
/// A function with no parameters returns 0.
inline double grad_check(const LossBuilder& f, ParameterStore& store, const GradCheckOptions& opt = {}) {
  if (!(opt.step > 0.0)) throw ConfigError("grad_check: step must be positive");
  if (store.size() == 0) return 0.0;
  GradientMap analytic;
  {
    Tape tape(opt.mode, opt.seed);
    Var loss = f(tape, store);
    if (!loss.value().all_finite()) throw NumericalError("grad_check: non-finite loss");
    analytic = tape.backward(loss, store);
  }
  double worst = 0.0;
  for (ParamId id = 0; id < store.size(); ++id) {
    Tensor& p = store.value(id);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + opt.step;
      const double up = evaluate_loss(f, store, opt);
      p[i] = orig - opt.step;
      const double down = evaluate_loss(f, store, opt);
      p[i] = orig;
      const double fd = (up - down) / (2.0 * opt.step);
      if (!std::isfinite(analytic[id][i])) throw NumericalError("grad_check: non-finite gradient");
      diff = std::max(diff, std::abs(analytic[id][i] - fd));
      scale = std::max(scale, std::abs(fd));
    }
    worst = std::max(worst, diff / (scale + 1e-12));
  }
  return worst;
}

}  // namespace lfi
