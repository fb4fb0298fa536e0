#include "fedcast/optim.hpp"

#include <cmath>

namespace fedcast::nn {

OptimizerState OptimizerState::fresh(const Layout& layout) {
  OptimizerState s;
  s.first_moment.assign(layout.total_size(), 0.0);
  s.second_moment.assign(layout.total_size(), 0.0);
  return s;
}

void adam_step(OptimizerState& state, ParameterVector& params, std::span<const double> gradient, double lr) {
  const std::size_t n = params.size();
  if (gradient.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw DimensionMismatch("adam_step: parameter, gradient and state layouts differ");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto w = params.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gradient[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    w[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

}  // namespace fedcast::nn
