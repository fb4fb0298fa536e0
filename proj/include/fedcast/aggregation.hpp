#pragma once

// Server-side aggregation strategies.
//
// Sign convention: a client delta is w_local - w_global and every server rule
// adds its (scaled) step to the global model, so FedAvg with a unit server
// learning rate yields the sample-weighted average of the client models.

#include "fedcast/params.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedcast::agg {

using nn::ParameterVector;

enum class Strategy { SimpleAvg, MedianAvg, FedAvg, FedProx, FedAvgM, FedNova, FedAdagrad, FedYogi, FedAdam };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
const std::vector<Strategy>& all_strategies();

struct AggregatorConfig {
  Strategy strategy = Strategy::FedAvg;
  double server_lr = 1.0;  // eta
  double mu = 0.0;         // FedProx proximal weight (client side)
  double beta = 0.0;       // FedAvgM server momentum
  double rho = 0.0;        // FedNova momentum on the normalized update
  double beta1 = 0.9;      // adaptive first moment (unused by FedAdagrad)
  double beta2 = 0.99;     // adaptive second moment
  double lambda = 1e-3;    // adaptivity / epsilon term

  /// Defaults per strategy: unit server lr for the FedAvg family; eta = 0.1
  /// and lambda = 1e-3 for the adaptive ones; beta1 = 0 for FedAdagrad.
  static AggregatorConfig defaults(Strategy s);
  void validate() const;
  bool operator==(const AggregatorConfig&) const = default;
};

struct ClientUpdate {
  std::string client_id;
  ParameterVector delta;                 // w_local - w_global
  std::optional<ParameterVector> local;  // the transmitted local model, when kept
  std::size_t n_samples = 1;
  std::size_t local_steps = 1;

  static ClientUpdate from_local(std::string id, const ParameterVector& global, ParameterVector local,
                                 std::size_t n_samples, std::size_t local_steps);
  /// The client's model: `local` when present, else global + delta.
  ParameterVector local_model(const ParameterVector& global) const;
};

struct ServerState {
  ParameterVector momentum;      // u_t
  ParameterVector first_moment;  // m_t
  std::size_t round = 0;

  static ServerState zeros(const nn::Layout& layout);
};

struct AggregationResult {
  ParameterVector global;
  ServerState state;
};

/// Sample-count-weighted sum of client deltas.
ParameterVector weighted_delta(const std::vector<ClientUpdate>& updates);

AggregationResult aggregate(const AggregatorConfig& config, const ServerState& state, const ParameterVector& global,
                            const std::vector<ClientUpdate>& updates);

/// mu/2 * ||w - anchor||^2.
double proximal_loss_term(const ParameterVector& w, const ParameterVector& anchor, double mu);
/// Adds mu * (w - anchor) to `grad`.
void add_proximal_gradient(std::span<double> grad, const ParameterVector& w, const ParameterVector& anchor, double mu);

/// Coordinate-wise median; even counts average the two central values.
ParameterVector coordinate_median(const std::vector<ParameterVector>& models);

// ---------------------------------------------------------------------------
// Hyper-parameter grids.

/// Value lists per hyper-parameter name (mu, beta, rho, server_lr, lambda,
/// beta1, beta2). Empty map = the strategy defaults only.
using Grid = std::map<std::string, std::vector<double>>;

/// The search grid used for each strategy in the aggregator comparison.
Grid reference_grid(Strategy s);

/// Cartesian product of `grid` applied over the strategy defaults, in
/// lexicographic key order with the last key varying fastest.
std::vector<AggregatorConfig> expand_grid(Strategy s, const Grid& grid);

void set_hyperparameter(AggregatorConfig& config, const std::string& name, double value);

}  // namespace fedcast::agg
