#pragma once

#include <cstdint>
#include <vector>

#include "hsnerf/autodiff.hpp"

namespace hsnerf {

/// Adam moments, one pair per parameter block in ParameterStore order.
struct AdamState {
  std::int64_t step_count = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;

  /// Zero moments shaped like every block of params.
  static AdamState for_params(const ParameterStore& params, double lr = 1e-2);
};

/// One bias-corrected Adam update of every parameter from its grad.
/// Throws NumericalError naming the first block with a non-finite gradient;
/// in that case no parameter is modified.
void adam_step(ParameterStore& params, AdamState& state, double lr);

/// Exponential decay from base_lr to final_lr over decay_steps, constant after.
double lr_schedule(std::int64_t step, double base_lr, double final_lr, std::int64_t decay_steps);

}  // namespace hsnerf
