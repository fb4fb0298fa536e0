#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.
// Oracles here deliberately avoid the library's own code paths: gradients are
// checked with forward-only finite differences, the KS statistic by counting,
// and server optimizers by plain per-coordinate loops.

#include "fedcast/aggregation.hpp"
#include "fedcast/dataio.hpp"
#include "fedcast/model.hpp"
#include "fedcast/rng.hpp"
#include "fedcast/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

namespace fedcast::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  Rng rng(seed);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

/// Tiny version of each architecture, small enough to check every coordinate.
inline nn::ModelSpec tiny_spec(nn::Architecture a) {
  nn::ModelSpec s;
  s.architecture = a;
  s.window = 3;
  s.n_features = 4;
  s.n_targets = 2;
  s.mlp_hidden = {5, 4};
  s.recurrent_units = 3;
  s.head_units = 4;
  s.conv_filters = {2, 3};
  s.batch_size = 8;
  return s;
}

inline const std::vector<nn::Architecture>& all_architectures() {
  static const std::vector<nn::Architecture> a = {nn::Architecture::MLP, nn::Architecture::RNN,
                                                  nn::Architecture::LSTM, nn::Architecture::GRU,
                                                  nn::Architecture::CNN};
  return a;
}

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t retried = 0;  // coordinates re-checked at step / 10
};

/// Central finite differences of the batch MSE at the given coordinates,
/// compared against `analytic`. A ReLU kink inside [w - step, w + step]
/// spoils the central difference, so a coordinate that misses `tolerance`
/// is re-checked once at step / 10 and keeps the better of the two errors.
inline GradientCheck finite_difference_check(nn::Model& model, const nn::ParameterVector& params,
                                             const Matrix& inputs, const Matrix& targets,
                                             const std::vector<double>& analytic,
                                             const std::vector<std::size_t>& coords, double step = 1e-5,
                                             double tolerance = 1e-4) {
  GradientCheck out;
  nn::ParameterVector probe = params;
  const auto central = [&](std::size_t i, double h) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = model.evaluate_mse(probe, inputs, targets);
    probe[i] = original - h;
    const double down = model.evaluate_mse(probe, inputs, targets);
    probe[i] = original;
    return (up - down) / (2.0 * h);
  };
  for (const auto i : coords) {
    double err = relative_error(analytic[i], central(i, step));
    if (err >= tolerance) {
      err = std::min(err, relative_error(analytic[i], central(i, step / 10.0)));
      ++out.retried;
    }
    if (err > out.max_relative_error) {
      out.max_relative_error = err;
      out.worst_index = i;
    }
    ++out.checked;
  }
  return out;
}

/// Every coordinate of small tensors and a deterministic sample of
/// `per_tensor` coordinates of larger ones.
inline std::vector<std::size_t> coordinate_sample(const nn::Layout& layout, std::size_t per_tensor,
                                                  std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> coords;
  for (const auto& t : layout.tensors()) {
    const std::size_t n = t.size();
    if (n <= per_tensor) {
      for (std::size_t k = 0; k < n; ++k) coords.push_back(t.offset + k);
    } else {
      std::set<std::size_t> picked;
      while (picked.size() < per_tensor) picked.insert(static_cast<std::size_t>(rng.below(n)));
      for (const auto k : picked) coords.push_back(t.offset + k);
    }
  }
  return coords;
}

/// Two-sample KS statistic by evaluating both ECDFs at every sample point.
inline double brute_force_ks(const std::vector<double>& a, const std::vector<double>& b) {
  double best = 0.0;
  std::vector<double> points = a;
  points.insert(points.end(), b.begin(), b.end());
  for (double x : points) {
    double fa = 0.0, fb = 0.0;
    for (double v : a) fa += v <= x ? 1.0 : 0.0;
    for (double v : b) fb += v <= x ? 1.0 : 0.0;
    best = std::max(best, std::abs(fa / static_cast<double>(a.size()) - fb / static_cast<double>(b.size())));
  }
  return best;
}

/// One server step of the adaptive rules written out per coordinate.
struct AdaptiveOracle {
  std::vector<double> w, m, u;

  void step(agg::Strategy s, const std::vector<double>& dW, double eta, double beta1, double beta2, double lambda) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = dW[i];
      const double g2 = g * g;
      if (s == agg::Strategy::FedAdagrad) {
        u[i] = u[i] + g2;
        w[i] = w[i] + eta * g / (std::sqrt(u[i]) + lambda);
        continue;
      }
      if (s == agg::Strategy::FedYogi) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        const double d = u[i] - g2;
        const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        u[i] = u[i] - (1.0 - beta2) * g2 * sgn;
      } else {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        u[i] = beta2 * u[i] + (1.0 - beta2) * g2;
      }
      w[i] = w[i] + eta * m[i] / (std::sqrt(u[i]) + lambda);
    }
  }
};

/// A 1-D parameter vector holding `values`.
inline nn::ParameterVector vec(const std::vector<double>& values) {
  nn::Layout layout("test");
  layout.add("w", {values.size()});
  return nn::ParameterVector(layout, values);
}

/// Synthetic clients run through the full preprocessing pipeline.
inline std::vector<data::ClientData> synthetic_clients(std::size_t n_clients, std::size_t days, std::uint64_t seed,
                                                       const data::PreprocessConfig& config = {}) {
  synth::SyntheticSpec spec;
  spec.n_clients = n_clients;
  spec.min_days = spec.max_days = days;
  spec.seed = seed;
  return data::preprocess(synth::generate_synthetic(spec), config);
}

/// Keeps the first `n` windows of every split, for fast training tests.
inline std::vector<data::ClientData> truncate(std::vector<data::ClientData> clients, std::size_t n) {
  const auto cut = [n](data::WindowedDataset& w) {
    const auto k = static_cast<Eigen::Index>(std::min(n, w.size()));
    w.inputs = w.inputs.topRows(k).eval();
    w.targets = w.targets.topRows(k).eval();
  };
  for (auto& c : clients) {
    cut(c.train);
    cut(c.validation);
    cut(c.test);
  }
  return clients;
}

}  // namespace fedcast::testing
