#pragma once

// Experiment configuration and its JSON form.
//
// The file is a single JSON object. Unknown keys are rejected and every
// validation failure is reported as a ConfigError naming the offending field
// ("federation.fraction", "data.paths[2]", ...). Omitted keys take their
// defaults; serialize() always writes the fully resolved configuration, so
// parse(serialize(c)) == c.

#include "fedcast/aggregation.hpp"
#include "fedcast/dataio.hpp"
#include "fedcast/model.hpp"
#include "fedcast/synthetic.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fedcast::cfg {

enum class Setting { individual, centralized, federated };

const char* to_string(Setting s);
Setting setting_from_string(const std::string& s);

struct DataSource {
  std::vector<std::string> paths;                // CSV files, one per client
  std::optional<synth::SyntheticSpec> synthetic;  // used when `paths` is empty

  bool operator==(const DataSource&) const = default;
};

struct FederationKnobs {
  std::size_t rounds = 30;
  std::size_t local_epochs = 3;
  double fraction = 1.0;
  std::size_t fine_tune_epochs = 0;  // 0 skips local fine-tuning

  bool operator==(const FederationKnobs&) const = default;
};

struct TrainingKnobs {
  std::size_t max_epochs = 270;
  std::optional<std::size_t> patience = 50;

  bool operator==(const TrainingKnobs&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Setting setting = Setting::federated;
  DataSource data;
  data::PreprocessConfig preprocessing;
  nn::ModelSpec model;
  FederationKnobs federation;
  agg::AggregatorConfig aggregator;
  /// Hyper-parameter lists expanded over `aggregator`; empty runs one cell.
  agg::Grid grid;
  TrainingKnobs training;
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "runs";

  /// Throws ConfigError on the first invalid field.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json serialize_config(const ExperimentConfig& config);
std::string serialize_config_text(const ExperimentConfig& config);

nlohmann::json to_json(const synth::SyntheticSpec& spec);
synth::SyntheticSpec synthetic_from_json(const nlohmann::json& j, const std::string& path = "synthetic");

}  // namespace fedcast::cfg
