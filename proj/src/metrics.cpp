#include "fedcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace fedcast::metrics {

namespace {

void check(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw DimensionMismatch("metric inputs differ in length");
  if (pred.empty()) throw InvalidArgument("metric of an empty sample");
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> column(const Matrix& m, Eigen::Index j) {
  return std::vector<double>(m.col(j).begin(), m.col(j).end());
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
  check(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double nrmse(std::span<const double> pred, std::span<const double> truth) {
  check(pred, truth);
  const double m = mean(truth);
  if (m == 0.0) throw InvalidArgument("NRMSE undefined for zero-mean ground truth");
  return rmse(pred, truth) / m;
}

MetricReport evaluate_original(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw DimensionMismatch("forecast and truth shapes differ");
  }
  if (static_cast<std::size_t>(pred.cols()) != data::kNumTargets) {
    throw DimensionMismatch("forecasts must have one column per target");
  }
  if (pred.rows() == 0) throw InvalidArgument("no forecasts to evaluate");
  MetricReport r;
  r.n = static_cast<std::size_t>(pred.rows());
  for (std::size_t j = 0; j < data::kNumTargets; ++j) {
    const auto p = column(pred, static_cast<Eigen::Index>(j));
    const auto t = column(truth, static_cast<Eigen::Index>(j));
    r.mae[j] = mae(p, t);
    r.rmse[j] = rmse(p, t);
    if (mean(t) != 0.0) r.nrmse[j] = nrmse(p, t);
    r.avg_mae += r.mae[j] / static_cast<double>(data::kNumTargets);
    r.avg_rmse += r.rmse[j] / static_cast<double>(data::kNumTargets);
  }
  if (r.nrmse[0] && r.nrmse[1]) r.avg_nrmse = 0.5 * (*r.nrmse[0] + *r.nrmse[1]);
  return r;
}

MetricReport evaluate_forecasts(const Matrix& pred_scaled, const Matrix& truth_scaled,
                                const data::ScalerParams& scaler) {
  if (scaler.n_features() < data::kNumTargets) throw DimensionMismatch("scaler does not cover the targets");
  return evaluate_original(data::inverse_scale_targets(pred_scaled, scaler),
                           data::inverse_scale_targets(truth_scaled, scaler));
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("KS statistic needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double na = static_cast<double>(x.size()), nb = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return best;
}

}  // namespace fedcast::metrics
