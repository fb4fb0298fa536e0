// fedcast: generate synthetic traces, run experiments from a config file and
// merge experiment summaries into plot data.

#include "fedcast/config.hpp"
#include "fedcast/experiment.hpp"
#include "fedcast/synthetic.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace fedcast;
namespace fs = std::filesystem;

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound(path.string());
  std::stringstream text;
  text << in.rdbuf();
  try {
    return nlohmann::json::parse(text.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON in ") + path.string() + ": " + e.what());
  }
}

void print_cells(const exp::ExperimentSummary& s) {
  std::printf("%s (%s)\n", s.name.c_str(), cfg::to_string(s.setting));
  for (const auto& c : s.cells) {
    std::string hp;
    for (const auto& [k, v] : c.hyperparameters) hp += " " + k + "=" + std::to_string(v);
    std::printf("  %s%s  runs=%zu  NRMSE %.4f +- %.4f  MAE %.4g +- %.4g  RMSE %.4g +- %.4g\n", c.cell.c_str(),
                hp.c_str(), c.runs, c.test_nrmse.mean, c.test_nrmse.std, c.test_mae.mean, c.test_mae.std,
                c.test_rmse.mean, c.test_rmse.std);
  }
}

int generate(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
             std::size_t clients, std::size_t days) {
  synth::SyntheticSpec spec;
  if (!config_path.empty()) {
    auto j = read_json(config_path);
    // Accept either a bare synthetic spec or a full experiment config.
    if (j.contains("data")) {
      const auto config = cfg::parse_config(j);
      if (!config.data.synthetic) throw ConfigError("data.synthetic", "the config has no synthetic spec");
      spec = *config.data.synthetic;
    } else {
      spec = cfg::synthetic_from_json(j);
    }
  } else {
    spec.n_clients = clients;
    spec.min_days = spec.max_days = days;
  }
  if (seed) spec.seed = *seed;
  spec.validate();
  fs::create_directories(out_dir);
  for (const auto& ds : synth::generate_synthetic(spec)) {
    const auto path = fs::path(out_dir) / (ds.client_id + ".csv");
    data::write_csv(path, ds);
    std::printf("%s  %zu rows\n", path.string().c_str(), ds.n_timesteps());
  }
  return 0;
}

int run(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  auto config = cfg::load_config(config_path);
  if (!out_dir.empty()) config.output_dir = out_dir;
  if (seed) config.seeds = {*seed};
  config.validate();
  const auto summary = exp::run_experiment(config);
  print_cells(summary);
  std::printf("outputs written to %s\n", config.output_dir.c_str());
  return 0;
}

int report(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<exp::ExperimentSummary> summaries;
  for (const auto& d : dirs) {
    summaries.push_back(exp::summary_from_json(read_json(fs::path(d) / "summary.json")));
    print_cells(summaries.back());
  }
  exp::emit_plot_data(summaries, out);
  std::printf("plot data written to %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated traffic-forecasting simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::size_t clients = 3, days = 2;
  auto* gen = app.add_subcommand("generate", "Write synthetic base-station traces as CSV files");
  gen->add_option("--config", config_path, "Synthetic spec (or experiment config) JSON file");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Override the generator seed");
  gen->add_option("--clients", clients, "Number of clients when no config is given");
  gen->add_option("--days", days, "Days per client when no config is given");

  auto* runner = app.add_subcommand("run", "Run an experiment from a config file");
  runner->add_option("--config", config_path, "Experiment config JSON file")->required();
  runner->add_option("--out", out_dir, "Override the output directory");
  runner->add_option("--seed", seed, "Run a single seed instead of the configured list");

  std::vector<std::string> dirs;
  std::string plot_out = "plot_data.csv";
  auto* rep = app.add_subcommand("report", "Merge experiment summaries into one plot-data CSV");
  rep->add_option("dirs", dirs, "Experiment output directories")->required();
  rep->add_option("--out", plot_out, "Plot data CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return generate(config_path, out_dir, seed, clients, days);
    if (*runner) return run(config_path, out_dir, seed);
    if (*rep) return report(dirs, plot_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error at %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
