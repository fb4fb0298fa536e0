#pragma once

// End-to-end experiment runner: data -> preprocessing -> setting, repeated over
// aggregator grid cells and seeds, with on-disk reports.
//
// Output layout under config.output_dir:
//   manifest.json                   resolved config (re-runnable as-is)
//   summary.json, summary.csv       one entry per (cell, seed) plus per-cell mean/std
//   plot_data.csv                   long format: experiment,seed,round,metric,value
//   cell-<k>/seed-<s>/rounds.csv    learning curve
//   cell-<k>/seed-<s>/clients.csv   per-client round log (federated only)
//   cell-<k>/seed-<s>/checkpoint.bin (checkpoint-<client>.bin for individual)
//   cell-<k>/seed-<s>/report.json

#include "fedcast/config.hpp"
#include "fedcast/federation.hpp"
#include "fedcast/metrics.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedcast::exp {

struct CurvePoint {
  std::size_t round = 0;  // federated round or training epoch, 1-based
  std::string client = "all";
  std::size_t n_sampled = 0;
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;  // original units, mean over clients
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
};

struct ClientResult {
  std::string client_id;
  metrics::MetricReport test;
  std::optional<metrics::MetricReport> fine_tuned;
};

struct RunResult {
  std::string cell;
  std::map<std::string, double> hyperparameters;  // the grid values of this cell
  std::uint64_t seed = 0;
  std::vector<CurvePoint> curve;
  std::vector<fl::RoundRecord> round_records;  // federated only
  std::optional<std::size_t> best_round;
  std::vector<ClientResult> clients;
  double test_nrmse = 0.0;  // means over clients of the averaged metrics
  double test_mae = 0.0;
  double test_rmse = 0.0;
  std::optional<double> fine_tuned_nrmse;
  double val_mae = 0.0;  // selected model, original units, mean over clients
  std::uint64_t payload_bytes = 0;
  std::uint64_t total_bytes = 0;
  std::vector<std::pair<std::string, nn::ParameterVector>> models;  // "" for the shared model
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
};

MeanStd mean_std(const std::vector<double>& values);

struct CellSummary {
  std::string cell;
  std::map<std::string, double> hyperparameters;
  std::size_t runs = 0;
  MeanStd test_nrmse, test_mae, test_rmse, val_mae;
};

struct ExperimentSummary {
  std::string name;
  cfg::Setting setting = cfg::Setting::federated;
  std::vector<RunResult> runs;
  std::vector<CellSummary> cells;
};

std::vector<data::TimeSeriesDataset> load_traces(const cfg::ExperimentConfig& config);

/// Per-client reports on `segment` (validation or test), in original units.
std::vector<metrics::MetricReport> evaluate_clients(nn::Model& model, const nn::ParameterVector& params,
                                                    const std::vector<data::ClientData>& clients,
                                                    data::Segment segment);
/// Mean of the clients' averaged MAE on their validation windows.
double validation_mae(nn::Model& model, const nn::ParameterVector& params,
                      const std::vector<data::ClientData>& clients);

/// One (cell, seed) run without touching the filesystem.
RunResult run_single(const cfg::ExperimentConfig& config, const agg::AggregatorConfig& aggregator,
                     const std::vector<data::ClientData>& clients, std::uint64_t seed);

/// Runs every cell and seed; writes the output tree when `write_outputs`.
ExperimentSummary run_experiment(const cfg::ExperimentConfig& config, bool write_outputs = true);

nlohmann::json summary_to_json(const ExperimentSummary& summary);
ExperimentSummary summary_from_json(const nlohmann::json& j);

void write_rounds_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

/// Long-format plot data for one or more experiments.
void emit_plot_data(const std::vector<ExperimentSummary>& summaries, const std::filesystem::path& path);

}  // namespace fedcast::exp
