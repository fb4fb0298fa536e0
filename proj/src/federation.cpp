#include "fedcast/federation.hpp"

#include "fedcast/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace fedcast::fl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Sampling draws come from a stream separate from client shuffles and init.
constexpr std::uint64_t kSamplingStream = 0x73616d706c65ULL;

}  // namespace

void FederationConfig::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("sampling fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  aggregator.validate();
  model.validate();
}

std::size_t sample_size(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("sampling fraction must be in (0, 1]");
  // The small slack keeps products such as 0.1 * 30 from flooring to 2.
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<std::size_t> sample_indices(std::size_t n, double fraction, std::size_t round, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("cannot sample from an empty client list");
  const std::size_t k = sample_size(n, fraction);
  std::vector<std::size_t> picked;
  if (k == n) {
    picked.resize(n);
    for (std::size_t i = 0; i < n; ++i) picked[i] = i;
    return picked;
  }
  Rng rng(mix_seed(mix_seed(seed, kSamplingStream), round));
  auto order = rng.permutation(n);
  picked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::vector<std::string> sample_clients(const std::vector<std::string>& client_ids, double fraction,
                                        std::size_t round, std::uint64_t seed) {
  std::vector<std::string> out;
  for (const auto i : sample_indices(client_ids.size(), fraction, round, seed)) out.push_back(client_ids[i]);
  return out;
}

std::uint64_t client_seed(std::uint64_t seed, std::size_t index) { return mix_seed(seed, index); }

FederationHistory run_federated(const FederationConfig& config, const std::vector<data::ClientData>& clients,
                                const RoundObserver& observer) {
  config.validate();
  if (clients.empty()) throw InvalidArgument("federation needs at least one client");
  bool any_train = false;
  bool any_validation = false;
  for (const auto& c : clients) {
    if (c.train.n_features != config.model.n_features || c.train.window != config.model.window) {
      if (!c.train.empty()) {
        throw DimensionMismatch("client '" + c.client_id + "' windows do not match the model input shape");
      }
    }
    any_train = any_train || !c.train.empty();
    any_validation = any_validation || !c.validation.empty();
  }
  if (!any_train) throw InvalidArgument("no client has training windows");

  auto model = std::make_shared<nn::Model>(config.model);
  std::vector<nn::LocalTrainer> trainers;
  trainers.reserve(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) trainers.emplace_back(model, client_seed(config.seed, i));

  FederationHistory history;
  history.payload_bytes = nn::serialized_size(model->layout());
  history.initial_global = nn::init_model(config.model, config.seed);
  history.best_global = history.initial_global;
  ParameterVector global = history.initial_global;
  auto state = agg::ServerState::zeros(model->layout());
  double best_mse = std::numeric_limits<double>::infinity();

  for (std::size_t t = 1; t <= config.rounds; ++t) {
    RoundRecord record;
    record.round = t;
    record.clients.resize(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
      auto& s = record.clients[i];
      s.client_id = clients[i].client_id;
      s.n_samples = clients[i].train.size();
      s.train_loss = kNaN;
    }

    std::vector<agg::ClientUpdate> updates;
    for (const auto i : sample_indices(clients.size(), config.fraction, t, config.seed)) {
      const auto& client = clients[i];
      auto& s = record.clients[i];
      s.sampled = true;
      s.downlink_bytes = history.payload_bytes;
      record.sampled.push_back(client.client_id);
      record.downlink_bytes += history.payload_bytes;
      // A client without training windows receives the model but has nothing to send back.
      if (client.train.empty()) continue;

      std::optional<nn::Proximal> proximal;
      if (config.aggregator.strategy == agg::Strategy::FedProx && config.aggregator.mu != 0.0) {
        proximal = nn::Proximal{config.aggregator.mu, global};
      }
      auto report = trainers[i].train(global, client.train, data::WindowedDataset{}, config.local_epochs, proximal);
      s.local_steps = report.local_steps;
      if (!report.train_loss.empty()) s.train_loss = report.train_loss.back();
      s.uplink_bytes = history.payload_bytes;
      record.uplink_bytes += history.payload_bytes;
      // With E = 0 the update is zero; one nominal step keeps step-normalized rules defined.
      updates.push_back(agg::ClientUpdate::from_local(client.client_id, global, std::move(report.params),
                                                      client.train.size(), std::max<std::size_t>(1, s.local_steps)));
    }

    if (!updates.empty()) {
      auto result = agg::aggregate(config.aggregator, state, global, updates);
      global = std::move(result.global);
      state = std::move(result.state);
    }

    double weighted = 0.0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      const auto& eval = any_validation ? clients[i].validation : clients[i].train;
      auto& s = record.clients[i];
      s.validation_count = eval.size();
      if (eval.empty()) {
        s.validation_mse = kNaN;
        continue;
      }
      s.validation_mse = model->evaluate_mse(global, eval.inputs, eval.targets);
      weighted += s.validation_mse * static_cast<double>(eval.size());
      total += eval.size();
    }
    record.validation_mse = weighted / static_cast<double>(total);

    if (record.validation_mse < best_mse) {
      best_mse = record.validation_mse;
      history.best_round = t;
      history.best_global = global;
    }
    if (config.keep_trajectory) history.trajectory.push_back(global);
    if (observer) observer(record, global);
    history.rounds.push_back(std::move(record));
  }
  history.final_global = global;
  return history;
}

SettingReport run_centralized(const SettingConfig& config, const data::WindowedDataset& pooled_train,
                              const data::WindowedDataset& pooled_validation, const nn::EpochObserver& observer) {
  config.model.validate();
  if (pooled_train.empty()) throw InvalidArgument("centralized training needs non-empty training windows");
  SettingReport report;
  report.config = config;
  report.n_train = pooled_train.size();
  report.n_validation = pooled_validation.size();
  nn::LocalTrainer trainer(config.model, client_seed(config.seed, 0));
  auto params = nn::init_model(config.model, config.seed);
  if (config.patience) {
    report.train = trainer.train_with_early_stopping(std::move(params), pooled_train, pooled_validation,
                                                     config.max_epochs, *config.patience, observer);
  } else {
    report.train = trainer.train(std::move(params), pooled_train, pooled_validation, config.max_epochs,
                                 std::nullopt, observer);
  }
  return report;
}

SettingReport run_centralized(const SettingConfig& config, const std::vector<data::ClientData>& clients,
                              const nn::EpochObserver& observer) {
  std::vector<const data::WindowedDataset*> train, validation;
  for (const auto& c : clients) {
    train.push_back(&c.train);
    validation.push_back(&c.validation);
  }
  if (train.empty()) throw InvalidArgument("centralized training needs at least one client");
  return run_centralized(config, data::concat_windows(train), data::concat_windows(validation), observer);
}

SettingReport run_individual(const SettingConfig& config, const data::ClientData& client, std::size_t stream,
                             const nn::EpochObserver& observer) {
  config.model.validate();
  if (client.train.empty()) {
    throw InvalidArgument("client '" + client.client_id + "' has no training windows");
  }
  SettingReport report;
  report.config = config;
  report.n_train = client.train.size();
  report.n_validation = client.validation.size();
  nn::LocalTrainer trainer(config.model, client_seed(config.seed, stream));
  auto params = nn::init_model(config.model, config.seed);
  if (config.patience) {
    report.train = trainer.train_with_early_stopping(std::move(params), client.train, client.validation,
                                                     config.max_epochs, *config.patience, observer);
  } else {
    report.train = trainer.train(std::move(params), client.train, client.validation, config.max_epochs,
                                 std::nullopt, observer);
  }
  return report;
}

ParameterVector fine_tune(const nn::ModelSpec& spec, const ParameterVector& global,
                          const data::WindowedDataset& train, std::size_t epochs, std::uint64_t seed) {
  if (epochs == 0 || train.empty()) return global;
  nn::LocalTrainer trainer(spec, seed);
  return trainer.train(global, train, data::WindowedDataset{}, epochs).params;
}

CommunicationLedger account_communication(std::uint64_t payload_bytes,
                                          const std::vector<std::vector<std::string>>& sampled_per_round,
                                          std::size_t upto_round) {
  if (upto_round > sampled_per_round.size()) {
    throw InvalidArgument("upto_round " + std::to_string(upto_round) + " exceeds the " +
                          std::to_string(sampled_per_round.size()) + " recorded rounds");
  }
  CommunicationLedger ledger;
  ledger.payload_bytes = payload_bytes;
  ledger.rounds = upto_round;
  for (std::size_t t = 0; t < upto_round; ++t) {
    for (const auto& id : sampled_per_round[t]) {
      auto& c = ledger.clients[id];
      c.uplink += payload_bytes;
      c.downlink += payload_bytes;
      ++c.rounds;
      ledger.server_sent += payload_bytes;
      ledger.server_received += payload_bytes;
    }
  }
  return ledger;
}

CommunicationLedger account_communication(std::uint64_t payload_bytes, const FederationHistory& history,
                                          std::size_t upto_round) {
  std::vector<std::vector<std::string>> sampled;
  sampled.reserve(history.rounds.size());
  for (const auto& r : history.rounds) sampled.push_back(r.sampled);
  return account_communication(payload_bytes, sampled, upto_round);
}

std::uint64_t total_transfer_bytes(std::uint64_t payload_bytes, std::size_t clients_per_round, std::size_t rounds) {
  return 2 * payload_bytes * clients_per_round * rounds;
}

}  // namespace fedcast::fl
