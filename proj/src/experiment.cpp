#include "fedcast/experiment.hpp"

#include "fedcast/rng.hpp"
#include "fedcast/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace fedcast::exp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Full round-trip precision; CSV outputs must be byte-stable across runs.
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json opt_num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num_or_nan(const json& j) { return j.is_number() ? j.get<double>() : kNaN; }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

// Every grid combination applied over the configured aggregator, in
// lexicographic key order with the last key varying fastest.
std::vector<std::map<std::string, double>> grid_cells(const agg::Grid& grid) {
  std::vector<std::map<std::string, double>> cells(1);
  for (const auto& [key, values] : grid) {
    std::vector<std::map<std::string, double>> next;
    for (const auto& partial : cells) {
      for (double v : values) {
        auto cell = partial;
        cell[key] = v;
        next.push_back(std::move(cell));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

void fill_test_metrics(RunResult& run) {
  std::vector<double> nrmse, mae, rmse, tuned;
  for (const auto& c : run.clients) {
    if (c.test.avg_nrmse) nrmse.push_back(*c.test.avg_nrmse);
    mae.push_back(c.test.avg_mae);
    rmse.push_back(c.test.avg_rmse);
    if (c.fine_tuned && c.fine_tuned->avg_nrmse) tuned.push_back(*c.fine_tuned->avg_nrmse);
  }
  run.test_nrmse = mean_of(nrmse);
  run.test_mae = mean_of(mae);
  run.test_rmse = mean_of(rmse);
  if (!tuned.empty()) run.fine_tuned_nrmse = mean_of(tuned);
}

json report_to_json(const metrics::MetricReport& r) {
  json nrmse = json::array();
  for (const auto& v : r.nrmse) nrmse.push_back(v ? json(*v) : json(nullptr));
  return {{"mae", r.mae},
          {"rmse", r.rmse},
          {"nrmse", nrmse},
          {"avg_mae", r.avg_mae},
          {"avg_rmse", r.avg_rmse},
          {"avg_nrmse", r.avg_nrmse ? json(*r.avg_nrmse) : json(nullptr)},
          {"n", r.n}};
}

json run_to_json(const RunResult& run) {
  json curve = json::array();
  for (const auto& p : run.curve) {
    curve.push_back({{"round", p.round},
                     {"client", p.client},
                     {"n_sampled", p.n_sampled},
                     {"train_loss", opt_num(p.train_loss)},
                     {"val_mse", opt_num(p.val_mse)},
                     {"val_mae", opt_num(p.val_mae)},
                     {"uplink_bytes", p.uplink_bytes},
                     {"downlink_bytes", p.downlink_bytes}});
  }
  json clients = json::array();
  for (const auto& c : run.clients) {
    clients.push_back({{"client_id", c.client_id},
                       {"test", report_to_json(c.test)},
                       {"fine_tuned", c.fine_tuned ? report_to_json(*c.fine_tuned) : json(nullptr)}});
  }
  return {{"cell", run.cell},
          {"hyperparameters", run.hyperparameters},
          {"seed", run.seed},
          {"best_round", run.best_round ? json(*run.best_round) : json(nullptr)},
          {"test_nrmse", opt_num(run.test_nrmse)},
          {"test_mae", opt_num(run.test_mae)},
          {"test_rmse", opt_num(run.test_rmse)},
          {"fine_tuned_nrmse", run.fine_tuned_nrmse ? json(*run.fine_tuned_nrmse) : json(nullptr)},
          {"val_mae", opt_num(run.val_mae)},
          {"payload_bytes", run.payload_bytes},
          {"total_bytes", run.total_bytes},
          {"clients", clients},
          {"curve", curve}};
}

RunResult run_from_json(const json& j) {
  RunResult run;
  run.cell = j.at("cell").get<std::string>();
  run.hyperparameters = j.at("hyperparameters").get<std::map<std::string, double>>();
  run.seed = j.at("seed").get<std::uint64_t>();
  if (j.at("best_round").is_number()) run.best_round = j.at("best_round").get<std::size_t>();
  run.test_nrmse = num_or_nan(j.at("test_nrmse"));
  run.test_mae = num_or_nan(j.at("test_mae"));
  run.test_rmse = num_or_nan(j.at("test_rmse"));
  if (j.at("fine_tuned_nrmse").is_number()) run.fine_tuned_nrmse = j.at("fine_tuned_nrmse").get<double>();
  run.val_mae = num_or_nan(j.at("val_mae"));
  run.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
  run.total_bytes = j.at("total_bytes").get<std::uint64_t>();
  for (const auto& p : j.at("curve")) {
    CurvePoint c;
    c.round = p.at("round").get<std::size_t>();
    c.client = p.at("client").get<std::string>();
    c.n_sampled = p.at("n_sampled").get<std::size_t>();
    c.train_loss = num_or_nan(p.at("train_loss"));
    c.val_mse = num_or_nan(p.at("val_mse"));
    c.val_mae = num_or_nan(p.at("val_mae"));
    c.uplink_bytes = p.at("uplink_bytes").get<std::uint64_t>();
    c.downlink_bytes = p.at("downlink_bytes").get<std::uint64_t>();
    run.curve.push_back(std::move(c));
  }
  return run;
}

json mean_std_json(const MeanStd& m) { return {{"mean", opt_num(m.mean)}, {"std", opt_num(m.std)}}; }
MeanStd mean_std_from(const json& j) { return {num_or_nan(j.at("mean")), num_or_nan(j.at("std"))}; }

void write_clients_csv(const fs::path& path, const std::vector<fl::RoundRecord>& records) {
  auto out = open_out(path);
  out << "round,client,sampled,n_samples,local_steps,train_loss,val_mse,uplink_bytes,downlink_bytes\n";
  for (const auto& r : records) {
    for (const auto& c : r.clients) {
      out << r.round << ',' << c.client_id << ',' << (c.sampled ? 1 : 0) << ',' << c.n_samples << ','
          << c.local_steps << ',' << num(c.train_loss) << ',' << num(c.validation_mse) << ',' << c.uplink_bytes
          << ',' << c.downlink_bytes << '\n';
    }
  }
}

void write_summary_csv(const fs::path& path, const ExperimentSummary& s) {
  std::vector<std::string> keys;
  for (const auto& run : s.runs) {
    for (const auto& [k, v] : run.hyperparameters) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
  }
  auto out = open_out(path);
  out << "experiment,cell";
  for (const auto& k : keys) out << ',' << k;
  out << ",seed,best_round,test_nrmse,test_mae,test_rmse,val_mae,fine_tuned_nrmse,total_bytes\n";
  for (const auto& run : s.runs) {
    out << s.name << ',' << run.cell;
    for (const auto& k : keys) {
      const auto it = run.hyperparameters.find(k);
      out << ',' << (it == run.hyperparameters.end() ? std::string() : num(it->second));
    }
    out << ',' << run.seed << ',' << (run.best_round ? std::to_string(*run.best_round) : std::string()) << ','
        << num(run.test_nrmse) << ',' << num(run.test_mae) << ',' << num(run.test_rmse) << ','
        << num(run.val_mae) << ',' << (run.fine_tuned_nrmse ? num(*run.fine_tuned_nrmse) : std::string()) << ','
        << run.total_bytes << '\n';
  }
}

void write_run(const fs::path& dir, const RunResult& run) {
  fs::create_directories(dir);
  write_rounds_csv(dir / "rounds.csv", run.curve);
  if (!run.round_records.empty()) write_clients_csv(dir / "clients.csv", run.round_records);
  for (const auto& [client, params] : run.models) {
    nn::save_checkpoint((dir / (client.empty() ? "checkpoint.bin" : "checkpoint-" + client + ".bin")).string(), params);
  }
  auto out = open_out(dir / "report.json");
  out << run_to_json(run).dump(2) << '\n';
}

}  // namespace

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  if (values.empty()) return {kNaN, kNaN};
  m.mean = mean_of(values);
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::vector<data::TimeSeriesDataset> load_traces(const cfg::ExperimentConfig& config) {
  if (config.data.synthetic) return synth::generate_synthetic(*config.data.synthetic);
  std::vector<data::TimeSeriesDataset> raw;
  for (const auto& p : config.data.paths) raw.push_back(data::load_csv(p));
  return raw;
}

std::vector<metrics::MetricReport> evaluate_clients(nn::Model& model, const nn::ParameterVector& params,
                                                    const std::vector<data::ClientData>& clients,
                                                    data::Segment segment) {
  std::vector<metrics::MetricReport> out;
  for (const auto& c : clients) {
    const auto& windows = segment == data::Segment::test ? c.test : segment == data::Segment::validation
                                                                        ? c.validation
                                                                        : c.train;
    if (windows.empty()) {
      out.emplace_back();
      continue;
    }
    out.push_back(metrics::evaluate_forecasts(model.predict(params, windows.inputs), windows.targets, c.scaler));
  }
  return out;
}

double validation_mae(nn::Model& model, const nn::ParameterVector& params,
                      const std::vector<data::ClientData>& clients) {
  std::vector<double> mae;
  const auto reports = evaluate_clients(model, params, clients, data::Segment::validation);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (!clients[i].validation.empty()) mae.push_back(reports[i].avg_mae);
  }
  return mean_of(mae);
}

RunResult run_single(const cfg::ExperimentConfig& config, const agg::AggregatorConfig& aggregator,
                     const std::vector<data::ClientData>& clients, std::uint64_t seed) {
  RunResult run;
  run.seed = seed;
  nn::Model eval(config.model);
  run.payload_bytes = nn::serialized_size(eval.layout());

  const auto test_reports = [&](const nn::ParameterVector& params) {
    const auto reports = evaluate_clients(eval, params, clients, data::Segment::test);
    for (std::size_t i = 0; i < clients.size(); ++i) run.clients.push_back({clients[i].client_id, reports[i], {}});
  };

  switch (config.setting) {
    case cfg::Setting::federated: {
      fl::FederationConfig fc;
      fc.rounds = config.federation.rounds;
      fc.local_epochs = config.federation.local_epochs;
      fc.fraction = config.federation.fraction;
      fc.aggregator = aggregator;
      fc.model = config.model;
      fc.seed = seed;
      const auto history = fl::run_federated(fc, clients, [&](const fl::RoundRecord& r, const nn::ParameterVector& g) {
        CurvePoint p;
        p.round = r.round;
        p.n_sampled = r.sampled.size();
        std::vector<double> losses;
        for (const auto& c : r.clients) {
          if (c.sampled && !std::isnan(c.train_loss)) losses.push_back(c.train_loss);
        }
        p.train_loss = mean_of(losses);
        p.val_mse = r.validation_mse;
        p.val_mae = validation_mae(eval, g, clients);
        p.uplink_bytes = r.uplink_bytes;
        p.downlink_bytes = r.downlink_bytes;
        run.curve.push_back(p);
      });
      run.round_records = history.rounds;
      run.best_round = history.best_round;
      run.total_bytes = fl::account_communication(history.payload_bytes, history, history.rounds.size()).total_bytes();
      run.val_mae = validation_mae(eval, history.best_global, clients);
      test_reports(history.best_global);
      if (config.federation.fine_tune_epochs > 0) {
        for (std::size_t i = 0; i < clients.size(); ++i) {
          const auto tuned = fl::fine_tune(config.model, history.best_global, clients[i].train,
                                           config.federation.fine_tune_epochs,
                                           mix_seed(fl::client_seed(seed, i), 0x6674));
          if (!clients[i].test.empty()) {
            run.clients[i].fine_tuned = metrics::evaluate_forecasts(eval.predict(tuned, clients[i].test.inputs),
                                                                    clients[i].test.targets, clients[i].scaler);
          }
        }
      }
      run.models.emplace_back("", history.best_global);
      break;
    }
    case cfg::Setting::centralized: {
      fl::SettingConfig sc{config.model, config.training.max_epochs, config.training.patience, seed};
      const auto report = fl::run_centralized(sc, clients, [&](std::size_t epoch, const nn::ParameterVector& params,
                                                               double val_loss) {
        CurvePoint p;
        p.round = epoch;
        p.val_mse = val_loss;
        p.val_mae = validation_mae(eval, params, clients);
        run.curve.push_back(p);
      });
      for (std::size_t e = 0; e < run.curve.size() && e < report.train.train_loss.size(); ++e) {
        run.curve[e].train_loss = report.train.train_loss[e];
      }
      run.best_round = report.train.best_epoch;
      run.val_mae = validation_mae(eval, report.train.params, clients);
      test_reports(report.train.params);
      run.models.emplace_back("", report.train.params);
      break;
    }
    case cfg::Setting::individual: {
      fl::SettingConfig sc{config.model, config.training.max_epochs, config.training.patience, seed};
      std::vector<double> val_mae;
      for (std::size_t i = 0; i < clients.size(); ++i) {
        const std::vector<data::ClientData> self{clients[i]};
        const std::size_t first = run.curve.size();
        const auto report = fl::run_individual(sc, clients[i], i, [&](std::size_t epoch,
                                                                       const nn::ParameterVector& params,
                                                                       double val_loss) {
          CurvePoint p;
          p.round = epoch;
          p.client = clients[i].client_id;
          p.val_mse = val_loss;
          p.val_mae = validation_mae(eval, params, self);
          run.curve.push_back(p);
        });
        for (std::size_t e = 0; first + e < run.curve.size() && e < report.train.train_loss.size(); ++e) {
          run.curve[first + e].train_loss = report.train.train_loss[e];
        }
        if (!clients[i].validation.empty()) val_mae.push_back(validation_mae(eval, report.train.params, self));
        const auto reports = evaluate_clients(eval, report.train.params, self, data::Segment::test);
        run.clients.push_back({clients[i].client_id, reports[0], {}});
        run.models.emplace_back(clients[i].client_id, report.train.params);
      }
      run.val_mae = mean_of(val_mae);
      break;
    }
  }
  fill_test_metrics(run);
  return run;
}

ExperimentSummary run_experiment(const cfg::ExperimentConfig& config, bool write_outputs) {
  config.validate();
  const auto clients = data::preprocess(load_traces(config), config.preprocessing);
  const fs::path root(config.output_dir);
  if (write_outputs) {
    fs::create_directories(root);
    auto out = open_out(root / "manifest.json");
    out << cfg::serialize_config_text(config);
  }

  ExperimentSummary summary;
  summary.name = config.name;
  summary.setting = config.setting;
  const auto cells = grid_cells(config.grid);
  for (std::size_t k = 0; k < cells.size(); ++k) {
    auto aggregator = config.aggregator;
    for (const auto& [key, value] : cells[k]) agg::set_hyperparameter(aggregator, key, value);
    CellSummary cell;
    cell.cell = "cell-" + std::to_string(k);
    cell.hyperparameters = cells[k];
    std::vector<double> nrmse, mae, rmse, vmae;
    for (const auto seed : config.seeds) {
      auto run = run_single(config, aggregator, clients, seed);
      run.cell = cell.cell;
      run.hyperparameters = cells[k];
      if (write_outputs) write_run(root / cell.cell / ("seed-" + std::to_string(seed)), run);
      nrmse.push_back(run.test_nrmse);
      mae.push_back(run.test_mae);
      rmse.push_back(run.test_rmse);
      vmae.push_back(run.val_mae);
      // Parameters are on disk by now; the summary keeps only the numbers.
      run.models.clear();
      run.round_records.clear();
      summary.runs.push_back(std::move(run));
    }
    cell.runs = config.seeds.size();
    cell.test_nrmse = mean_std(nrmse);
    cell.test_mae = mean_std(mae);
    cell.test_rmse = mean_std(rmse);
    cell.val_mae = mean_std(vmae);
    summary.cells.push_back(std::move(cell));
  }

  if (write_outputs) {
    auto out = open_out(root / "summary.json");
    out << summary_to_json(summary).dump(2) << '\n';
    write_summary_csv(root / "summary.csv", summary);
    emit_plot_data({summary}, root / "plot_data.csv");
  }
  return summary;
}

json summary_to_json(const ExperimentSummary& s) {
  json runs = json::array();
  for (const auto& r : s.runs) runs.push_back(run_to_json(r));
  json cells = json::array();
  for (const auto& c : s.cells) {
    cells.push_back({{"cell", c.cell},
                     {"hyperparameters", c.hyperparameters},
                     {"runs", c.runs},
                     {"test_nrmse", mean_std_json(c.test_nrmse)},
                     {"test_mae", mean_std_json(c.test_mae)},
                     {"test_rmse", mean_std_json(c.test_rmse)},
                     {"val_mae", mean_std_json(c.val_mae)}});
  }
  return {{"name", s.name}, {"setting", cfg::to_string(s.setting)}, {"cells", cells}, {"runs", runs}};
}

ExperimentSummary summary_from_json(const json& j) {
  ExperimentSummary s;
  s.name = j.at("name").get<std::string>();
  s.setting = cfg::setting_from_string(j.at("setting").get<std::string>());
  for (const auto& c : j.at("cells")) {
    CellSummary cell;
    cell.cell = c.at("cell").get<std::string>();
    cell.hyperparameters = c.at("hyperparameters").get<std::map<std::string, double>>();
    cell.runs = c.at("runs").get<std::size_t>();
    cell.test_nrmse = mean_std_from(c.at("test_nrmse"));
    cell.test_mae = mean_std_from(c.at("test_mae"));
    cell.test_rmse = mean_std_from(c.at("test_rmse"));
    cell.val_mae = mean_std_from(c.at("val_mae"));
    s.cells.push_back(std::move(cell));
  }
  for (const auto& r : j.at("runs")) s.runs.push_back(run_from_json(r));
  return s;
}

void write_rounds_csv(const fs::path& path, const std::vector<CurvePoint>& curve) {
  auto out = open_out(path);
  out << "round,client,n_sampled,train_loss,val_mse,val_mae,uplink_bytes,downlink_bytes\n";
  for (const auto& p : curve) {
    out << p.round << ',' << p.client << ',' << p.n_sampled << ',' << num(p.train_loss) << ',' << num(p.val_mse)
        << ',' << num(p.val_mae) << ',' << p.uplink_bytes << ',' << p.downlink_bytes << '\n';
  }
}

void emit_plot_data(const std::vector<ExperimentSummary>& summaries, const fs::path& path) {
  if (summaries.empty()) throw InvalidArgument("emit_plot_data needs at least one summary");
  auto out = open_out(path);
  out << "experiment,cell,seed,round,client,metric,value\n";
  for (const auto& s : summaries) {
    for (const auto& run : s.runs) {
      const auto prefix = s.name + ',' + run.cell + ',' + std::to_string(run.seed) + ',';
      for (const auto& p : run.curve) {
        const auto at = prefix + std::to_string(p.round) + ',' + p.client + ',';
        out << at << "train_loss," << num(p.train_loss) << '\n';
        out << at << "val_mse," << num(p.val_mse) << '\n';
        out << at << "val_mae," << num(p.val_mae) << '\n';
      }
      // Final metrics are attached to the selected round (0 when unknown).
      const auto at = prefix + std::to_string(run.best_round.value_or(0)) + ",all,";
      out << at << "test_nrmse," << num(run.test_nrmse) << '\n';
      out << at << "test_mae," << num(run.test_mae) << '\n';
      out << at << "test_rmse," << num(run.test_rmse) << '\n';
      if (run.fine_tuned_nrmse) out << at << "fine_tuned_nrmse," << num(*run.fine_tuned_nrmse) << '\n';
    }
  }
}

}  // namespace fedcast::exp
