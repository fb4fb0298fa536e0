#pragma once

// Internal building blocks shared by the network implementations.

#include "fedcast/common.hpp"
#include "fedcast/params.hpp"
#include "fedcast/rng.hpp"

#include <cmath>
#include <span>

namespace fedcast::nn::detail {

using ConstMatMap = Eigen::Map<const Matrix>;
using MatMap = Eigen::Map<Matrix>;
using ConstRowMap = Eigen::Map<const RowVector>;
using RowMap = Eigen::Map<RowVector>;

inline ConstMatMap cmat(std::span<const double> p, std::size_t offset, std::size_t rows, std::size_t cols) {
  return {p.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
inline MatMap mat(std::span<double> p, std::size_t offset, std::size_t rows, std::size_t cols) {
  return {p.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
inline ConstRowMap crow(std::span<const double> p, std::size_t offset, std::size_t n) {
  return {p.data() + offset, static_cast<Eigen::Index>(n)};
}
inline RowMap row(std::span<double> p, std::size_t offset, std::size_t n) {
  return {p.data() + offset, static_cast<Eigen::Index>(n)};
}

inline void fill_uniform(std::span<double> p, std::size_t offset, std::size_t n, double bound, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) p[offset + i] = rng.uniform(-bound, bound);
}

/// Fully connected layer y = x W + b with W stored (in x out), row-major.
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t w = 0;  // offsets into the flat vector
  std::size_t b = 0;

  static Dense append(Layout& layout, const std::string& prefix, std::size_t in, std::size_t out) {
    Dense d;
    d.in = in;
    d.out = out;
    d.w = layout.add(prefix + ".weight", {in, out});
    d.b = layout.add(prefix + ".bias", {out});
    return d;
  }

  void init(std::span<double> p, Rng& rng) const {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    fill_uniform(p, w, in * out, bound, rng);
    fill_uniform(p, b, out, bound, rng);
  }

  void forward(std::span<const double> p, const Matrix& x, Matrix& y) const {
    y.noalias() = x * cmat(p, w, in, out);
    y.rowwise() += crow(p, b, out);
  }

  /// Accumulates parameter gradients; writes dL/dx when `dx` is given.
  void backward(std::span<const double> p, const Matrix& x, const Matrix& dy, std::span<double> g,
                Matrix* dx) const {
    mat(g, w, in, out).noalias() += x.transpose() * dy;
    row(g, b, out) += dy.colwise().sum();
    if (dx != nullptr) dx->noalias() = dy * cmat(p, w, in, out).transpose();
  }
};

inline void relu_inplace(Matrix& m) { m = m.cwiseMax(0.0); }

/// dx = dy where the pre-activation was positive, 0 elsewhere.
inline void relu_backward(const Matrix& pre, Matrix& d) {
  d = (pre.array() > 0.0).select(d, 0.0);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace fedcast::nn::detail
