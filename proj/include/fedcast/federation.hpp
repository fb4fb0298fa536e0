#pragma once

// The three learning settings (individual, centralized, federated), client
// sampling and communication accounting.

#include "fedcast/aggregation.hpp"
#include "fedcast/dataio.hpp"
#include "fedcast/model.hpp"
#include "fedcast/train.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedcast::fl {

using nn::ParameterVector;

struct FederationConfig {
  std::size_t rounds = 30;
  std::size_t local_epochs = 3;
  double fraction = 1.0;
  agg::AggregatorConfig aggregator;
  nn::ModelSpec model;
  std::uint64_t seed = 0;
  /// Keep the global parameters after every round in the history.
  bool keep_trajectory = false;

  void validate() const;
};

struct ClientRoundStats {
  std::string client_id;
  bool sampled = false;
  std::size_t n_samples = 0;
  std::size_t local_steps = 0;     // tau_i; 0 when not sampled
  double train_loss = 0.0;         // last local epoch; NaN when not sampled
  double validation_mse = 0.0;     // post-aggregation global model; NaN without validation windows
  std::size_t validation_count = 0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::vector<std::string> sampled;
  std::vector<ClientRoundStats> clients;  // every registered client, in registry order
  double validation_mse = 0.0;            // sample-weighted over all clients
  std::uint64_t uplink_bytes = 0;         // received by the server
  std::uint64_t downlink_bytes = 0;       // broadcast by the server
};

struct FederationHistory {
  std::vector<RoundRecord> rounds;
  std::optional<std::size_t> best_round;  // 1-based; empty when no round ran
  std::uint64_t payload_bytes = 0;
  ParameterVector initial_global;
  ParameterVector best_global;
  ParameterVector final_global;
  std::vector<ParameterVector> trajectory;  // only with keep_trajectory
};

/// max(1, floor(f * n)).
std::size_t sample_size(std::size_t n, double fraction);

/// Indices of the clients taking part in `round`, ascending. With f = 1 every
/// client participates; otherwise the subset is drawn uniformly without
/// replacement from a generator seeded by (seed, round).
std::vector<std::size_t> sample_indices(std::size_t n, double fraction, std::size_t round, std::uint64_t seed);
std::vector<std::string> sample_clients(const std::vector<std::string>& client_ids, double fraction,
                                        std::size_t round, std::uint64_t seed);

/// Seed of the local trainer for the client at registry position `index`.
std::uint64_t client_seed(std::uint64_t seed, std::size_t index);

using RoundObserver = std::function<void(const RoundRecord&, const ParameterVector& global)>;

FederationHistory run_federated(const FederationConfig& config, const std::vector<data::ClientData>& clients,
                                const RoundObserver& observer = {});

/// Early-stopped training of one model. Without `patience` the full
/// `max_epochs` run and the final parameters are returned.
struct SettingConfig {
  nn::ModelSpec model;
  std::size_t max_epochs = 270;
  std::optional<std::size_t> patience = 50;
  std::uint64_t seed = 0;
};

struct SettingReport {
  SettingConfig config;
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
  nn::TrainReport train;
};

/// One trainer over the union of all clients' windows.
SettingReport run_centralized(const SettingConfig& config, const std::vector<data::ClientData>& clients,
                              const nn::EpochObserver& observer = {});
SettingReport run_centralized(const SettingConfig& config, const data::WindowedDataset& pooled_train,
                              const data::WindowedDataset& pooled_validation,
                              const nn::EpochObserver& observer = {});

/// Trains on a single client. `stream` selects the shuffle stream; the value
/// used by run_federated for registry position i is i.
SettingReport run_individual(const SettingConfig& config, const data::ClientData& client, std::size_t stream = 0,
                             const nn::EpochObserver& observer = {});

/// Continues training from `global` on the client's training windows with a
/// fresh optimizer.
ParameterVector fine_tune(const nn::ModelSpec& spec, const ParameterVector& global,
                          const data::WindowedDataset& train, std::size_t epochs = 3, std::uint64_t seed = 0);

struct ClientTraffic {
  std::uint64_t uplink = 0;
  std::uint64_t downlink = 0;
  std::size_t rounds = 0;
};

struct CommunicationLedger {
  std::uint64_t payload_bytes = 0;
  std::size_t rounds = 0;
  std::map<std::string, ClientTraffic> clients;
  std::uint64_t server_sent = 0;
  std::uint64_t server_received = 0;

  /// Bytes the server moves in one direction (it sends and receives the same).
  std::uint64_t server_one_directional() const { return server_sent; }
  std::uint64_t total_bytes() const { return server_sent + server_received; }
};

CommunicationLedger account_communication(std::uint64_t payload_bytes,
                                          const std::vector<std::vector<std::string>>& sampled_per_round,
                                          std::size_t upto_round);
CommunicationLedger account_communication(std::uint64_t payload_bytes, const FederationHistory& history,
                                          std::size_t upto_round);

/// 2 * payload * clients_per_round * rounds.
std::uint64_t total_transfer_bytes(std::uint64_t payload_bytes, std::size_t clients_per_round, std::size_t rounds);

}  // namespace fedcast::fl
