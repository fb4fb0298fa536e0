#pragma once

// Per-client trace ingestion and the preprocessing pipeline:
// clean -> split -> flood/cap (train only) -> scale -> window.

#include "fedcast/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedcast::data {

/// Feature columns of the base-station traces, in file order. The first
/// `kNumTargets` are the prediction targets.
inline const std::vector<std::string>& default_schema() {
  static const std::vector<std::string> schema = {
      "DownLink", "UpLink",  "RNTI Count", "RB Up",      "RB Down",     "RB Up Var",
      "RB Down Var", "MCS Up", "MCS Down", "MCS Up Var", "MCS Down Var"};
  return schema;
}

inline constexpr std::size_t kNumTargets = 5;
inline constexpr std::int64_t kSamplingIntervalSeconds = 120;

enum class Segment { whole, train, validation, test };

const char* to_string(Segment s);

/// One client's multivariate trace. Missing cells are NaN until clean_missing.
struct TimeSeriesDataset {
  std::string client_id;
  std::vector<std::string> feature_names;
  std::vector<std::int64_t> timestamps;  // seconds since the Unix epoch
  Matrix values;                         // n_timesteps x n_features
  Segment segment = Segment::whole;

  std::size_t n_timesteps() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(values.cols()); }
  bool empty() const { return values.rows() == 0; }
};

struct SplitDataset {
  TimeSeriesDataset train;
  TimeSeriesDataset validation;
  TimeSeriesDataset test;
};

enum class ScalingScope { local, global };

const char* to_string(ScalingScope s);
ScalingScope scaling_scope_from_string(const std::string& s);

struct ScalerParams {
  std::vector<double> min;
  std::vector<double> max;
  ScalingScope scope = ScalingScope::local;

  std::size_t n_features() const { return min.size(); }
  /// Throws InvalidArgument unless sizes agree and min[j] <= max[j].
  void validate() const;
};

struct FloodCapParams {
  double lower_percentile = 10.0;
  double upper_percentile = 90.0;
  std::vector<double> cut_low;
  std::vector<double> cut_high;
  std::string fitted_on_client;
  Segment fitted_on_segment = Segment::train;
};

/// Supervised pairs. Row k of `inputs` is the flattened window of timesteps
/// [k, k+T-1] (timestep-major, T*d values); row k of `targets` holds the first
/// five features of timestep k+T.
struct WindowedDataset {
  std::string client_id;
  std::size_t window = 0;
  std::size_t n_features = 0;
  Matrix inputs;
  Matrix targets;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  bool empty() const { return inputs.rows() == 0; }
};

/// Parses "YYYY-MM-DD HH:MM:SS" or "YYYY-MM-DDTHH:MM:SS" (optional trailing Z).
std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t seconds);

/// Numeric value of a CSV cell; nullopt for empty, NaN/inf tokens or text.
std::optional<double> parse_cell(std::string_view cell);

TimeSeriesDataset load_csv(const std::filesystem::path& path,
                           const std::vector<std::string>& schema = default_schema());
void write_csv(const std::filesystem::path& path, const TimeSeriesDataset& ds);

TimeSeriesDataset clean_missing(TimeSeriesDataset ds);

SplitDataset split_chronological(const TimeSeriesDataset& ds);

/// Linear interpolation between order statistics (rank p/100 * (n-1)).
double percentile(std::vector<double> values, double pct);

FloodCapParams fit_flood_cap(const TimeSeriesDataset& train, double lower_pct, double upper_pct);
TimeSeriesDataset apply_flood_cap(TimeSeriesDataset ds, const FloodCapParams& params);

ScalerParams fit_scaler(const TimeSeriesDataset& train);
ScalerParams negotiate_global_scaler(const std::vector<ScalerParams>& local_params);

TimeSeriesDataset scale(TimeSeriesDataset ds, const ScalerParams& sc);
TimeSeriesDataset inverse_scale(TimeSeriesDataset ds, const ScalerParams& sc);
void scale_in_place(Matrix& values, const ScalerParams& sc);
void inverse_scale_in_place(Matrix& values, const ScalerParams& sc);
/// Inverse-scales an n x k matrix whose columns are the first k features.
Matrix inverse_scale_targets(const Matrix& scaled, const ScalerParams& sc);

WindowedDataset make_windows(const TimeSeriesDataset& segment, std::size_t window);

/// Concatenates windowed sets that share window and feature counts.
WindowedDataset concat_windows(const std::vector<const WindowedDataset*>& parts,
                               std::string client_id = "pooled");

// ---------------------------------------------------------------------------
// Pipeline over a federation of clients.

struct FloodCapSetting {
  double lower = 10.0;
  double upper = 90.0;
  bool operator==(const FloodCapSetting&) const = default;
};

struct PreprocessConfig {
  std::size_t window = 10;
  ScalingScope scaling = ScalingScope::global;
  /// Default percentiles when flood/cap is enabled; empty disables it.
  std::optional<FloodCapSetting> flood_cap = FloodCapSetting{};
  /// Per-client overrides keyed by client id.
  std::map<std::string, FloodCapSetting> flood_cap_per_client;
  bool operator==(const PreprocessConfig&) const = default;
};

struct ClientData {
  std::string client_id;
  WindowedDataset train;
  WindowedDataset validation;
  WindowedDataset test;
  ScalerParams scaler;
  std::optional<FloodCapParams> flood_cap;
};

std::vector<ClientData> preprocess(const std::vector<TimeSeriesDataset>& raw,
                                   const PreprocessConfig& config);

}  // namespace fedcast::data
