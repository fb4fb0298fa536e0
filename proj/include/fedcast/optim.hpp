#pragma once

#include "fedcast/params.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fedcast::nn {

/// Client-side Adam state. Moments share the parameter layout.
struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState fresh(const Layout& layout);
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(OptimizerState& state, ParameterVector& params, std::span<const double> gradient, double lr);

}  // namespace fedcast::nn
