#include "fedcast/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace fedcast::cfg {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

double as_double(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "expected a finite number");
  return v;
}

std::uint64_t as_u64(const json& j, const std::string& path) {
  if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
    throw ConfigError(path, "expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

std::size_t as_size(const json& j, const std::string& path) { return static_cast<std::size_t>(as_u64(j, path)); }

std::int64_t as_i64(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<std::int64_t>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

template <class F>
auto as_list(const json& j, const std::string& path, F&& convert) {
  if (!j.is_array()) throw ConfigError(path, "expected a list");
  std::vector<decltype(convert(j, path))> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(convert(j[i], index(path, i)));
  return out;
}

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  template <class T, class F>
  void read(const std::string& key, T& out, F&& convert) {
    if (const auto* v = find(key)) out = convert(*v, path(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(path(key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Runs a component validator and reports its failure under `path`.
template <class F>
void check(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

json profile_to_json(const synth::ClientProfile& p) {
  return {{"baseline", p.baseline},
          {"daily_amplitude", p.daily_amplitude},
          {"weekly_amplitude", p.weekly_amplitude},
          {"noise_scale", p.noise_scale},
          {"spike_probability", p.spike_probability},
          {"spike_magnitude", p.spike_magnitude},
          {"phase", p.phase}};
}

synth::ClientProfile profile_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  synth::ClientProfile p;
  s.read("baseline", p.baseline, [](const json& v, const std::string& at) { return as_list(v, at, as_double); });
  s.read("daily_amplitude", p.daily_amplitude, as_double);
  s.read("weekly_amplitude", p.weekly_amplitude, as_double);
  s.read("noise_scale", p.noise_scale, as_double);
  s.read("spike_probability", p.spike_probability, as_double);
  s.read("spike_magnitude", p.spike_magnitude, as_double);
  s.read("phase", p.phase, as_double);
  s.finish();
  return p;
}

json flood_cap_to_json(const data::FloodCapSetting& f) { return {{"lower", f.lower}, {"upper", f.upper}}; }

data::FloodCapSetting flood_cap_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  data::FloodCapSetting f;
  s.read("lower", f.lower, as_double);
  s.read("upper", f.upper, as_double);
  s.finish();
  if (!(f.lower > 0.0 && f.lower < f.upper && f.upper < 100.0)) {
    throw ConfigError(path, "percentiles must satisfy 0 < lower < upper < 100");
  }
  return f;
}

json model_to_json(const nn::ModelSpec& m) {
  return {{"architecture", nn::to_string(m.architecture)},
          {"window", m.window},
          {"n_features", m.n_features},
          {"n_targets", m.n_targets},
          {"mlp_hidden", m.mlp_hidden},
          {"recurrent_units", m.recurrent_units},
          {"head_units", m.head_units},
          {"conv_filters", m.conv_filters},
          {"kernel", m.kernel},
          {"learning_rate", m.learning_rate},
          {"batch_size", m.batch_size}};
}

nn::ModelSpec model_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  nn::ModelSpec m;
  if (const auto* a = s.find("architecture")) {
    check(s.path("architecture"), [&] { m.architecture = nn::architecture_from_string(as_string(*a, s.path("architecture"))); });
  }
  const auto sizes = [](const json& v, const std::string& at) { return as_list(v, at, as_size); };
  s.read("window", m.window, as_size);
  s.read("n_features", m.n_features, as_size);
  s.read("n_targets", m.n_targets, as_size);
  s.read("mlp_hidden", m.mlp_hidden, sizes);
  s.read("recurrent_units", m.recurrent_units, as_size);
  s.read("head_units", m.head_units, as_size);
  s.read("conv_filters", m.conv_filters, sizes);
  s.read("kernel", m.kernel, as_size);
  s.read("learning_rate", m.learning_rate, as_double);
  s.read("batch_size", m.batch_size, as_size);
  s.finish();
  return m;
}

json aggregator_to_json(const agg::AggregatorConfig& a) {
  return {{"strategy", agg::to_string(a.strategy)},
          {"server_lr", a.server_lr},
          {"mu", a.mu},
          {"beta", a.beta},
          {"rho", a.rho},
          {"beta1", a.beta1},
          {"beta2", a.beta2},
          {"lambda", a.lambda}};
}

agg::AggregatorConfig aggregator_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  // The strategy picks the defaults the remaining keys override.
  agg::AggregatorConfig a;
  if (const auto* v = s.find("strategy")) {
    check(s.path("strategy"), [&] { a = agg::AggregatorConfig::defaults(agg::strategy_from_string(as_string(*v, s.path("strategy")))); });
  }
  s.read("server_lr", a.server_lr, as_double);
  s.read("mu", a.mu, as_double);
  s.read("beta", a.beta, as_double);
  s.read("rho", a.rho, as_double);
  s.read("beta1", a.beta1, as_double);
  s.read("beta2", a.beta2, as_double);
  s.read("lambda", a.lambda, as_double);
  s.finish();
  return a;
}

}  // namespace

const char* to_string(Setting s) {
  switch (s) {
    case Setting::individual: return "individual";
    case Setting::centralized: return "centralized";
    case Setting::federated: return "federated";
  }
  return "?";
}

Setting setting_from_string(const std::string& s) {
  if (s == "individual") return Setting::individual;
  if (s == "centralized") return Setting::centralized;
  if (s == "federated") return Setting::federated;
  throw InvalidArgument("unknown setting '" + s + "' (expected individual, centralized or federated)");
}

json to_json(const synth::SyntheticSpec& spec) {
  json profiles = json::array();
  for (const auto& p : spec.profiles) profiles.push_back(profile_to_json(p));
  return {{"n_clients", spec.n_clients},
          {"min_days", spec.min_days},
          {"max_days", spec.max_days},
          {"profiles", profiles},
          {"spike_probability", spec.spike_probability},
          {"spike_magnitude", spec.spike_magnitude},
          {"noise_scale", spec.noise_scale},
          {"seed", spec.seed},
          {"start_time", spec.start_time},
          {"id_prefix", spec.id_prefix}};
}

synth::SyntheticSpec synthetic_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  synth::SyntheticSpec spec;
  s.read("n_clients", spec.n_clients, as_size);
  if (const auto* days = s.find("days")) {
    spec.min_days = spec.max_days = as_size(*days, s.path("days"));
  }
  s.read("min_days", spec.min_days, as_size);
  s.read("max_days", spec.max_days, as_size);
  s.read("profiles", spec.profiles,
         [](const json& v, const std::string& at) { return as_list(v, at, profile_from_json); });
  s.read("spike_probability", spec.spike_probability, as_double);
  s.read("spike_magnitude", spec.spike_magnitude, as_double);
  s.read("noise_scale", spec.noise_scale, as_double);
  s.read("seed", spec.seed, as_u64);
  s.read("start_time", spec.start_time, as_i64);
  s.read("id_prefix", spec.id_prefix, as_string);
  s.finish();
  check(path, [&] { spec.validate(); });
  return spec;
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name", "must not be empty");
  if (data.paths.empty() && !data.synthetic) throw ConfigError("data", "needs either paths or a synthetic spec");
  if (!data.paths.empty() && data.synthetic) throw ConfigError("data", "paths and synthetic are mutually exclusive");
  if (data.synthetic) check("data.synthetic", [&] { data.synthetic->validate(); });
  if (preprocessing.window == 0) throw ConfigError("preprocessing.window", "must be at least 1");
  if (model.window != preprocessing.window) {
    throw ConfigError("model.window", "must equal preprocessing.window");
  }
  check("model", [&] { model.validate(); });
  check("aggregator", [&] { aggregator.validate(); });
  if (!(federation.fraction > 0.0 && federation.fraction <= 1.0)) {
    throw ConfigError("federation.fraction", "must lie in (0, 1]");
  }
  if (setting != Setting::federated && training.max_epochs == 0) {
    throw ConfigError("training.max_epochs", "must be at least 1");
  }
  if (training.patience && *training.patience == 0) throw ConfigError("training.patience", "must be at least 1");
  for (const auto& [key, values] : grid) {
    if (values.empty()) throw ConfigError("grid." + key, "value list must not be empty");
  }
  for (const auto& [key, values] : grid) {
    check("grid." + key, [&] {
      auto probe = aggregator;
      agg::set_hyperparameter(probe, key, values.front());
    });
    for (std::size_t i = 0; i < values.size(); ++i) {
      check(index("grid." + key, i), [&] {
        auto cell = aggregator;
        agg::set_hyperparameter(cell, key, values[i]);
        cell.validate();
      });
    }
  }
  if (seeds.empty()) throw ConfigError("seeds", "must list at least one seed");
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
}

ExperimentConfig parse_config(const json& j) {
  Section root(j, "");
  ExperimentConfig c;
  root.read("name", c.name, as_string);
  if (const auto* v = root.find("setting")) {
    check("setting", [&] { c.setting = setting_from_string(as_string(*v, "setting")); });
  }

  if (const auto* v = root.find("data")) {
    Section s(*v, "data");
    s.read("paths", c.data.paths, [](const json& x, const std::string& at) { return as_list(x, at, as_string); });
    if (const auto* syn = s.find("synthetic"); syn && !syn->is_null()) {
      c.data.synthetic = synthetic_from_json(*syn, s.path("synthetic"));
    }
    s.finish();
  }

  if (const auto* v = root.find("preprocessing")) {
    Section s(*v, "preprocessing");
    s.read("window", c.preprocessing.window, as_size);
    if (const auto* sc = s.find("scaling")) {
      check(s.path("scaling"), [&] { c.preprocessing.scaling = data::scaling_scope_from_string(as_string(*sc, s.path("scaling"))); });
    }
    if (const auto* fc = s.find("flood_cap")) {
      if (fc->is_null()) {
        c.preprocessing.flood_cap.reset();
      } else {
        c.preprocessing.flood_cap = flood_cap_from_json(*fc, s.path("flood_cap"));
      }
    }
    if (const auto* per = s.find("flood_cap_per_client")) {
      Section clients(*per, s.path("flood_cap_per_client"));
      for (const auto& [id, value] : per->items()) {
        clients.find(id);
        c.preprocessing.flood_cap_per_client[id] = flood_cap_from_json(value, clients.path(id));
      }
    }
    s.finish();
  }
  // The model window follows the preprocessing window unless set explicitly.
  c.model.window = c.preprocessing.window;
  if (const auto* v = root.find("model")) {
    json m = *v;
    if (m.is_object() && !m.contains("window")) m["window"] = c.preprocessing.window;
    c.model = model_from_json(m, "model");
  }

  if (const auto* v = root.find("federation")) {
    Section s(*v, "federation");
    s.read("rounds", c.federation.rounds, as_size);
    s.read("local_epochs", c.federation.local_epochs, as_size);
    s.read("fraction", c.federation.fraction, as_double);
    s.read("fine_tune_epochs", c.federation.fine_tune_epochs, as_size);
    s.finish();
  }
  if (const auto* v = root.find("aggregator")) c.aggregator = aggregator_from_json(*v, "aggregator");

  if (const auto* v = root.find("grid")) {
    if (v->is_string()) {
      if (v->get<std::string>() != "reference") throw ConfigError("grid", "the only named grid is \"reference\"");
      c.grid = agg::reference_grid(c.aggregator.strategy);
    } else {
      Section s(*v, "grid");
      for (const auto& [key, values] : v->items()) {
        s.find(key);
        c.grid[key] = as_list(values, s.path(key), as_double);
      }
    }
  }

  if (const auto* v = root.find("training")) {
    Section s(*v, "training");
    s.read("max_epochs", c.training.max_epochs, as_size);
    if (const auto* p = s.find("patience")) {
      if (p->is_null()) {
        c.training.patience.reset();
      } else {
        c.training.patience = as_size(*p, s.path("patience"));
      }
    }
    s.finish();
  }
  root.read("seeds", c.seeds, [](const json& x, const std::string& at) { return as_list(x, at, as_u64); });
  root.read("output_dir", c.output_dir, as_string);
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound(path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

json serialize_config(const ExperimentConfig& c) {
  json per_client = json::object();
  for (const auto& [id, f] : c.preprocessing.flood_cap_per_client) per_client[id] = flood_cap_to_json(f);
  json grid = json::object();
  for (const auto& [key, values] : c.grid) grid[key] = values;
  return {{"name", c.name},
          {"setting", to_string(c.setting)},
          {"data",
           {{"paths", c.data.paths}, {"synthetic", c.data.synthetic ? to_json(*c.data.synthetic) : json(nullptr)}}},
          {"preprocessing",
           {{"window", c.preprocessing.window},
            {"scaling", data::to_string(c.preprocessing.scaling)},
            {"flood_cap", c.preprocessing.flood_cap ? flood_cap_to_json(*c.preprocessing.flood_cap) : json(nullptr)},
            {"flood_cap_per_client", per_client}}},
          {"model", model_to_json(c.model)},
          {"federation",
           {{"rounds", c.federation.rounds},
            {"local_epochs", c.federation.local_epochs},
            {"fraction", c.federation.fraction},
            {"fine_tune_epochs", c.federation.fine_tune_epochs}}},
          {"aggregator", aggregator_to_json(c.aggregator)},
          {"grid", grid},
          {"training",
           {{"max_epochs", c.training.max_epochs},
            {"patience", c.training.patience ? json(*c.training.patience) : json(nullptr)}}},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir}};
}

std::string serialize_config_text(const ExperimentConfig& config) { return serialize_config(config).dump(2) + "\n"; }

}  // namespace fedcast::cfg
