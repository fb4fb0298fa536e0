#include "fedcast/synthetic.hpp"

#include "fedcast/rng.hpp"

#include <cmath>
#include <numbers>

namespace fedcast::synth {

namespace {

// How strongly each column follows the load curve (exponent on the load).
const std::vector<double>& load_exponents() {
  static const std::vector<double> e = {1.2, 1.0, 0.8, 1.0, 1.1, 1.3, 1.4, 0.15, 0.2, 0.5, 0.5};
  return e;
}

// Columns that receive traffic spikes: DownLink, UpLink, RB Up, RB Down.
constexpr bool spiky(std::size_t j) { return j == 0 || j == 1 || j == 3 || j == 4; }

std::uint64_t stream(const SyntheticSpec& spec, std::size_t index, std::uint64_t purpose) {
  return mix_seed(mix_seed(spec.seed, purpose), index);
}

}  // namespace

const std::vector<double>& nominal_scales() {
  static const std::vector<double> s = {2.5e7, 3.0e6, 40.0, 1.5e4, 4.0e4, 2.0e3, 6.0e3, 14.0, 20.0, 6.0, 8.0};
  return s;
}

void ClientProfile::validate(std::size_t n_features) const {
  if (baseline.size() != n_features) {
    throw InvalidArgument("profile has " + std::to_string(baseline.size()) + " baselines, expected " +
                          std::to_string(n_features));
  }
  for (double b : baseline) {
    if (!(b > 0.0) || !std::isfinite(b)) throw InvalidArgument("profile baselines must be positive and finite");
  }
  if (daily_amplitude < 0.0 || weekly_amplitude < 0.0 || noise_scale < 0.0 || spike_magnitude < 0.0) {
    throw InvalidArgument("profile amplitudes, noise and spike magnitude must be non-negative");
  }
  if (spike_probability < 0.0 || spike_probability > 1.0) {
    throw InvalidArgument("spike probability must be in [0, 1]");
  }
}

void SyntheticSpec::validate() const {
  if (n_clients == 0) throw InvalidArgument("synthetic spec needs at least one client");
  if (min_days == 0) throw InvalidArgument("day count must be at least 1");
  if (max_days < min_days) throw InvalidArgument("max_days must not be below min_days");
  if (!profiles.empty() && profiles.size() != n_clients) {
    throw InvalidArgument("got " + std::to_string(profiles.size()) + " profiles for " + std::to_string(n_clients) +
                          " clients");
  }
  for (const auto& p : profiles) p.validate(data::default_schema().size());
  if (spike_probability < 0.0 || spike_probability > 1.0) {
    throw InvalidArgument("spike probability must be in [0, 1]");
  }
  if (spike_magnitude < 0.0 || noise_scale < 0.0) {
    throw InvalidArgument("spike magnitude and noise scale must be non-negative");
  }
}

ClientProfile client_profile(const SyntheticSpec& spec, std::size_t index) {
  if (!spec.profiles.empty()) return spec.profiles.at(index);
  Rng rng(stream(spec, index, 1));
  ClientProfile p;
  // One site-wide level factor plus a milder per-column jitter.
  const double level = std::exp(0.6 * rng.normal());
  for (double s : nominal_scales()) p.baseline.push_back(s * level * std::exp(0.15 * rng.normal()));
  p.daily_amplitude = rng.uniform(0.3, 0.7);
  p.weekly_amplitude = rng.uniform(0.05, 0.2);
  p.noise_scale = spec.noise_scale;
  p.spike_probability = spec.spike_probability;
  p.spike_magnitude = spec.spike_magnitude;
  p.phase = rng.uniform(-0.5, 0.5);
  return p;
}

std::size_t client_days(const SyntheticSpec& spec, std::size_t index) {
  if (spec.min_days == spec.max_days) return spec.min_days;
  Rng rng(stream(spec, index, 2));
  return spec.min_days + static_cast<std::size_t>(rng.below(spec.max_days - spec.min_days + 1));
}

std::vector<data::TimeSeriesDataset> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto& names = data::default_schema();
  const std::size_t d = names.size();
  const auto& exponents = load_exponents();
  constexpr double two_pi = 2.0 * std::numbers::pi;

  std::vector<data::TimeSeriesDataset> out;
  for (std::size_t c = 0; c < spec.n_clients; ++c) {
    const auto profile = client_profile(spec, c);
    const std::size_t n = client_days(spec, c) * kStepsPerDay;
    Rng rng(stream(spec, c, 3));

    data::TimeSeriesDataset ds;
    ds.client_id = spec.id_prefix + std::to_string(c);
    ds.feature_names = names;
    ds.timestamps.resize(n);
    ds.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));

    double ar = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      ds.timestamps[t] = spec.start_time + static_cast<std::int64_t>(t) * data::kSamplingIntervalSeconds;
      const double day = static_cast<double>(t) / kStepsPerDay;
      ar = 0.9 * ar + profile.noise_scale * rng.normal();
      const double load = std::max(0.05, 1.0 + profile.daily_amplitude * std::sin(two_pi * day + profile.phase) +
                                              profile.weekly_amplitude * std::sin(two_pi * day / 7.0) + ar);
      const bool spike = rng.uniform() < profile.spike_probability;
      const double spike_height = profile.spike_magnitude * rng.uniform(0.5, 1.5);
      for (std::size_t j = 0; j < d; ++j) {
        double v = profile.baseline[j] * std::pow(load, exponents[j]) * (1.0 + 0.02 * rng.normal());
        if (spike && spiky(j)) v += profile.baseline[j] * spike_height;
        ds.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = std::max(0.0, v);
      }
    }
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace fedcast::synth
