#include "hsnerf/optim.hpp"

#include <algorithm>
#include <cmath>

#include "hsnerf/error.hpp"

namespace hsnerf {

AdamState AdamState::for_params(const ParameterStore& params, double lr) {
  AdamState s;
  s.learning_rate = lr;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p->value.shape());
    s.second_moment.emplace_back(p->value.shape());
  }
  return s;
}

void adam_step(ParameterStore& params, AdamState& state, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("adam_step: learning rate must be finite and >= 0");
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw ShapeError("adam_step: optimizer state does not match the parameter store");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = params[k];
    if (state.first_moment[k].shape() != p.value.shape() || p.grad.shape() != p.value.shape())
      throw ShapeError("adam_step: shape mismatch in parameter block '" + p.name + "'");
    for (double g : p.grad.data())
      if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient in parameter block '" + p.name + "'");
  }

  state.learning_rate = lr;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double b1 = state.beta1, b2 = state.beta2;
  const double corr1 = 1.0 - std::pow(b1, t);
  const double corr2 = 1.0 - std::pow(b2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    double* w = p.value.ptr();
    const double* g = p.grad.ptr();
    double* m = state.first_moment[k].ptr();
    double* v = state.second_moment[k].ptr();
    const std::size_t n = p.value.numel();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / corr1;
      const double vhat = v[i] / corr2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

double lr_schedule(std::int64_t step, double base_lr, double final_lr, std::int64_t decay_steps) {
  if (step < 0) throw ConfigError("lr_schedule: step must be >= 0");
  if (decay_steps <= 0) throw ConfigError("lr_schedule: decay_steps must be > 0");
  if (!(base_lr > 0.0) || !(final_lr > 0.0)) throw ConfigError("lr_schedule: learning rates must be > 0");
  const double frac = static_cast<double>(std::min(step, decay_steps)) / static_cast<double>(decay_steps);
  if (frac >= 1.0) return final_lr;
  return base_lr * std::pow(final_lr / base_lr, frac);
}

}  // namespace hsnerf
