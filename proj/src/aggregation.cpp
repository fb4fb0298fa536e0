#include "fedcast/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fedcast::agg {

namespace {

// Sum_i weights[i] * models[i], seeded with the first term so a single model
// with weight 1 is reproduced bit for bit.
ParameterVector weighted_sum(const std::vector<const ParameterVector*>& models, const std::vector<double>& weights) {
  ParameterVector acc = *models.front();
  acc.as_eigen() *= weights.front();
  for (std::size_t i = 1; i < models.size(); ++i) acc.as_eigen() += weights[i] * models[i]->as_eigen();
  return acc;
}

std::vector<const ClientUpdate*> canonical_order(const std::vector<ClientUpdate>& updates, const ParameterVector* global) {
  if (updates.empty()) throw InvalidArgument("aggregation needs at least one client update");
  std::vector<const ClientUpdate*> sorted;
  for (const auto& u : updates) {
    if (u.n_samples == 0) throw InvalidArgument("client '" + u.client_id + "' reports zero samples");
    if (u.local_steps == 0) throw InvalidArgument("client '" + u.client_id + "' reports zero local steps");
    require_same_layout(u.delta, updates.front().delta, "client update");
    if (global != nullptr) require_same_layout(u.delta, *global, "client update vs global");
    if (u.local) require_same_layout(*u.local, u.delta, "client local model");
    sorted.push_back(&u);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->client_id == sorted[i - 1]->client_id) {
      throw InvalidArgument("duplicate update from client '" + sorted[i]->client_id + "'");
    }
  }
  return sorted;
}

double total_samples(const std::vector<const ClientUpdate*>& sorted) {
  std::size_t n = 0;
  for (const auto* u : sorted) n += u->n_samples;
  return static_cast<double>(n);
}

std::vector<double> sample_weights(const std::vector<const ClientUpdate*>& sorted) {
  const double n = total_samples(sorted);
  std::vector<double> p;
  for (const auto* u : sorted) p.push_back(static_cast<double>(u->n_samples) / n);
  return p;
}

ParameterVector weighted_delta_sorted(const std::vector<const ClientUpdate*>& sorted) {
  std::vector<const ParameterVector*> deltas;
  for (const auto* u : sorted) deltas.push_back(&u->delta);
  return weighted_sum(deltas, sample_weights(sorted));
}

std::vector<ParameterVector> local_models(const std::vector<const ClientUpdate*>& sorted, const ParameterVector& global) {
  std::vector<ParameterVector> models;
  for (const auto* u : sorted) models.push_back(u->local_model(global));
  return models;
}

std::vector<const ParameterVector*> pointers(const std::vector<ParameterVector>& v) {
  std::vector<const ParameterVector*> out;
  for (const auto& p : v) out.push_back(&p);
  return out;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::SimpleAvg: return "SimpleAvg";
    case Strategy::MedianAvg: return "MedianAvg";
    case Strategy::FedAvg: return "FedAvg";
    case Strategy::FedProx: return "FedProx";
    case Strategy::FedAvgM: return "FedAvgM";
    case Strategy::FedNova: return "FedNova";
    case Strategy::FedAdagrad: return "FedAdagrad";
    case Strategy::FedYogi: return "FedYogi";
    case Strategy::FedAdam: return "FedAdam";
  }
  return "?";
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all = {Strategy::SimpleAvg, Strategy::MedianAvg,  Strategy::FedAvg,
                                            Strategy::FedProx,   Strategy::FedAvgM,    Strategy::FedNova,
                                            Strategy::FedAdagrad, Strategy::FedYogi,   Strategy::FedAdam};
  return all;
}

Strategy strategy_from_string(const std::string& s) {
  for (auto st : all_strategies()) {
    if (s == to_string(st)) return st;
  }
  throw InvalidArgument("unknown aggregation strategy '" + s + "'");
}

AggregatorConfig AggregatorConfig::defaults(Strategy s) {
  AggregatorConfig c;
  c.strategy = s;
  switch (s) {
    case Strategy::FedAdagrad:
      c.server_lr = 0.1;
      c.beta1 = 0.0;
      break;
    case Strategy::FedYogi:
    case Strategy::FedAdam:
      c.server_lr = 0.1;
      break;
    default: break;
  }
  return c;
}

void AggregatorConfig::validate() const {
  const auto unit = [](double v) { return v >= 0.0 && v < 1.0; };
  if (!(server_lr > 0.0)) throw InvalidArgument("server learning rate must be positive");
  if (!(mu >= 0.0)) throw InvalidArgument("mu must be non-negative");
  if (!unit(beta)) throw InvalidArgument("beta must lie in [0, 1)");
  if (!unit(rho)) throw InvalidArgument("rho must lie in [0, 1)");
  if (!unit(beta1) || !unit(beta2)) throw InvalidArgument("beta1 and beta2 must lie in [0, 1)");
  if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
}

ClientUpdate ClientUpdate::from_local(std::string id, const ParameterVector& global, ParameterVector local,
                                      std::size_t n_samples, std::size_t local_steps) {
  require_same_layout(global, local, "client update");
  ClientUpdate u;
  u.client_id = std::move(id);
  u.delta = local;
  u.delta.as_eigen() -= global.as_eigen();
  u.local = std::move(local);
  u.n_samples = n_samples;
  u.local_steps = local_steps;
  return u;
}

ParameterVector ClientUpdate::local_model(const ParameterVector& global) const {
  if (local) return *local;
  ParameterVector w = global;
  w.as_eigen() += delta.as_eigen();
  return w;
}

ServerState ServerState::zeros(const nn::Layout& layout) {
  return ServerState{ParameterVector(layout), ParameterVector(layout), 0};
}

ParameterVector weighted_delta(const std::vector<ClientUpdate>& updates) {
  return weighted_delta_sorted(canonical_order(updates, nullptr));
}

ParameterVector coordinate_median(const std::vector<ParameterVector>& models) {
  if (models.empty()) throw InvalidArgument("median of no models");
  for (const auto& m : models) require_same_layout(m, models.front(), "median");
  ParameterVector out = models.front().zeros_like();
  const std::size_t k = models.size();
  std::vector<double> column(k);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c) column[c] = models[c][i];
    std::sort(column.begin(), column.end());
    out[i] = k % 2 == 1 ? column[k / 2] : 0.5 * (column[k / 2 - 1] + column[k / 2]);
  }
  return out;
}

AggregationResult aggregate(const AggregatorConfig& config, const ServerState& state, const ParameterVector& global,
                            const std::vector<ClientUpdate>& updates) {
  config.validate();
  const auto sorted = canonical_order(updates, &global);
  require_same_layout(state.momentum, global, "server momentum");
  require_same_layout(state.first_moment, global, "server first moment");

  AggregationResult result{global, state};
  result.state.round += 1;
  auto w = result.global.as_eigen();
  auto u = result.state.momentum.as_eigen();
  auto m = result.state.first_moment.as_eigen();
  const double eta = config.server_lr;

  switch (config.strategy) {
    case Strategy::SimpleAvg: {
      const auto models = local_models(sorted, global);
      const std::vector<double> equal(models.size(), 1.0 / static_cast<double>(models.size()));
      result.global = weighted_sum(pointers(models), equal);
      break;
    }
    case Strategy::MedianAvg: {
      result.global = coordinate_median(local_models(sorted, global));
      break;
    }
    case Strategy::FedAvg:
    case Strategy::FedProx: {
      if (eta == 1.0) {
        result.global = weighted_sum(pointers(local_models(sorted, global)), sample_weights(sorted));
      } else {
        w += eta * weighted_delta_sorted(sorted).as_eigen();
      }
      break;
    }
    case Strategy::FedAvgM: {
      // u_t = beta u_{t-1} + dW and w + u_t, evaluated as
      // (weighted model average) + beta u_{t-1}.
      const auto delta = weighted_delta_sorted(sorted);
      auto average = weighted_sum(pointers(local_models(sorted, global)), sample_weights(sorted));
      average.as_eigen() += config.beta * state.momentum.as_eigen();
      u = config.beta * state.momentum.as_eigen() + delta.as_eigen();
      result.global = std::move(average);
      break;
    }
    case Strategy::FedNova: {
      // Each delta is rescaled by tau_eff / tau_i with tau_eff = sum n_i tau_i / n.
      // The ratio is formed from integers so uniform tau gives exactly 1.
      std::size_t n_tau = 0, n = 0;
      for (const auto* c : sorted) {
        n_tau += c->n_samples * c->local_steps;
        n += c->n_samples;
      }
      const auto p = sample_weights(sorted);
      std::vector<ParameterVector> effective;
      std::vector<ParameterVector> scaled_deltas;
      for (const auto* c : sorted) {
        const double ratio = static_cast<double>(n_tau) / static_cast<double>(n * c->local_steps);
        if (ratio == 1.0) {
          effective.push_back(c->local_model(global));
          scaled_deltas.push_back(c->delta);
        } else {
          ParameterVector d = c->delta;
          d.as_eigen() *= ratio;
          ParameterVector e = global;
          e.as_eigen() += d.as_eigen();
          effective.push_back(std::move(e));
          scaled_deltas.push_back(std::move(d));
        }
      }
      const auto normalized = weighted_sum(pointers(scaled_deltas), p);
      u = config.rho * state.momentum.as_eigen() + normalized.as_eigen();
      if (eta == 1.0) {
        auto target = weighted_sum(pointers(effective), p);
        target.as_eigen() += config.rho * state.momentum.as_eigen();
        result.global = std::move(target);
      } else {
        w += eta * u;
      }
      break;
    }
    case Strategy::FedAdagrad: {
      const auto delta_params = weighted_delta_sorted(sorted);
      const auto delta = delta_params.as_eigen();
      u.array() += delta.array().square();
      w.array() += eta * delta.array() / (u.array().sqrt() + config.lambda);
      break;
    }
    case Strategy::FedYogi: {
      const auto delta_params = weighted_delta_sorted(sorted);
      const auto delta = delta_params.as_eigen();
      m = config.beta1 * m + (1.0 - config.beta1) * delta;
      const Eigen::ArrayXd sq = delta.array().square();
      const Eigen::ArrayXd s = (u.array() - sq).unaryExpr([](double x) { return sign(x); });
      u.array() -= (1.0 - config.beta2) * sq * s;
      w.array() += eta * m.array() / (u.array().sqrt() + config.lambda);
      break;
    }
    case Strategy::FedAdam: {
      const auto delta_params = weighted_delta_sorted(sorted);
      const auto delta = delta_params.as_eigen();
      m = config.beta1 * m + (1.0 - config.beta1) * delta;
      u.array() = config.beta2 * u.array() + (1.0 - config.beta2) * delta.array().square();
      w.array() += eta * m.array() / (u.array().sqrt() + config.lambda);
      break;
    }
  }
  return result;
}

double proximal_loss_term(const ParameterVector& w, const ParameterVector& anchor, double mu) {
  require_same_layout(w, anchor, "proximal term");
  if (!(mu >= 0.0)) throw InvalidArgument("mu must be non-negative");
  return 0.5 * mu * (w.as_eigen() - anchor.as_eigen()).squaredNorm();
}

void add_proximal_gradient(std::span<double> grad, const ParameterVector& w, const ParameterVector& anchor, double mu) {
  require_same_layout(w, anchor, "proximal gradient");
  if (grad.size() != w.size()) throw DimensionMismatch("proximal gradient: buffer size differs");
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += mu * (w[i] - anchor[i]);
}

Grid reference_grid(Strategy s) {
  switch (s) {
    case Strategy::FedProx: return {{"mu", {1e-3, 1e-2, 1e-1, 1.0}}};
    case Strategy::FedAvgM: return {{"beta", {0.0, 0.7, 0.9, 0.97, 0.99, 0.997}}};
    case Strategy::FedNova: return {{"rho", {0.0, 1e-3, 1e-2, 1e-1, 0.99}}};
    case Strategy::FedAdagrad:
    case Strategy::FedYogi:
    case Strategy::FedAdam: return {{"server_lr", {1e-2, 1e-1, 1.0}}, {"lambda", {1e-4, 1e-3, 1e-2, 1e-1}}};
    default: return {};
  }
}

void set_hyperparameter(AggregatorConfig& c, const std::string& name, double value) {
  if (name == "mu") c.mu = value;
  else if (name == "beta") c.beta = value;
  else if (name == "rho") c.rho = value;
  else if (name == "server_lr" || name == "eta") c.server_lr = value;
  else if (name == "lambda" || name == "tau") c.lambda = value;
  else if (name == "beta1") c.beta1 = value;
  else if (name == "beta2") c.beta2 = value;
  else throw InvalidArgument("unknown aggregator hyper-parameter '" + name + "'");
}

std::vector<AggregatorConfig> expand_grid(Strategy s, const Grid& grid) {
  std::vector<AggregatorConfig> out{AggregatorConfig::defaults(s)};
  for (const auto& [name, values] : grid) {
    if (values.empty()) throw InvalidArgument("grid list for '" + name + "' is empty");
    std::vector<AggregatorConfig> next;
    for (const auto& base : out) {
      for (double v : values) {
        auto c = base;
        set_hyperparameter(c, name, v);
        c.validate();
        next.push_back(c);
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace fedcast::agg
