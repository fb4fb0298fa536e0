#pragma once

// Forecast error metrics in original units and the two-sample
// Kolmogorov-Smirnov statistic used as a distribution-skew diagnostic.

#include "fedcast/common.hpp"
#include "fedcast/dataio.hpp"

#include <array>
#include <optional>
#include <span>

namespace fedcast::metrics {

double mae(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);
/// RMSE divided by the mean of `truth`; throws InvalidArgument on zero mean.
double nrmse(std::span<const double> pred, std::span<const double> truth);

struct MetricReport {
  std::array<double, data::kNumTargets> mae{};
  std::array<double, data::kNumTargets> rmse{};
  std::array<std::optional<double>, data::kNumTargets> nrmse{};  // empty when the target mean is 0
  double avg_mae = 0.0;
  double avg_rmse = 0.0;
  std::optional<double> avg_nrmse;  // mean of DownLink and UpLink NRMSE
  std::size_t n = 0;
};

/// Inverse-scales both matrices with `scaler` and computes the report.
MetricReport evaluate_forecasts(const Matrix& pred_scaled, const Matrix& truth_scaled, const data::ScalerParams& scaler);

/// Same report for matrices already in original units.
MetricReport evaluate_original(const Matrix& pred, const Matrix& truth);

/// sup_x |ECDF_a(x) - ECDF_b(x)|.
double ks_statistic(std::span<const double> a, std::span<const double> b);

}  // namespace fedcast::metrics
