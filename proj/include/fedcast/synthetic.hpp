#pragma once

// Synthetic base-station traces: a shared daily/weekly load curve with AR(1)
// noise drives every feature, and rare spikes hit the traffic columns.
// Clients differ in length (day count) and in per-feature baselines.

#include "fedcast/dataio.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedcast::synth {

inline constexpr std::size_t kStepsPerDay = 720;

struct ClientProfile {
  std::vector<double> baseline;  // per feature, original units
  double daily_amplitude = 0.5;  // relative to the baseline
  double weekly_amplitude = 0.1;
  double noise_scale = 0.05;      // innovation of the AR(1) load noise
  double spike_probability = 0.01;
  double spike_magnitude = 8.0;  // spike height in multiples of the baseline
  double phase = 0.0;            // radians, shifts the daily peak

  void validate(std::size_t n_features) const;
  bool operator==(const ClientProfile&) const = default;
};

struct SyntheticSpec {
  std::size_t n_clients = 3;
  std::size_t min_days = 2;  // each client's day count is drawn from [min_days, max_days]
  std::size_t max_days = 2;
  /// Explicit per-client profiles; when empty they are drawn from the seed.
  std::vector<ClientProfile> profiles;
  double spike_probability = 0.01;  // used for drawn profiles
  double spike_magnitude = 8.0;
  double noise_scale = 0.05;
  std::uint64_t seed = 0;
  std::int64_t start_time = 1514764800;  // 2018-01-01 00:00:00 UTC
  std::string id_prefix = "bs";

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

/// Typical magnitude of each schema column.
const std::vector<double>& nominal_scales();

/// The profile of client `index` (explicit, or drawn deterministically).
ClientProfile client_profile(const SyntheticSpec& spec, std::size_t index);
std::size_t client_days(const SyntheticSpec& spec, std::size_t index);

std::vector<data::TimeSeriesDataset> generate_synthetic(const SyntheticSpec& spec);

}  // namespace fedcast::synth
