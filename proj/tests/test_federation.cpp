#include "support.hpp"

#include "fedcast/federation.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

using namespace fedcast;
using namespace fedcast::fl;

namespace {

/// Full input shape of the pipeline (T = 10, d = 11, five targets) with small
/// hidden sizes so a whole federation runs in well under a second.
nn::ModelSpec small_spec(nn::Architecture a = nn::Architecture::MLP) {
  auto s = nn::ModelSpec::standard(a);
  s.mlp_hidden = {8};
  s.recurrent_units = 4;
  s.head_units = 4;
  s.conv_filters = {2, 2};
  s.batch_size = 32;
  return s;
}

const std::vector<data::ClientData>& three_clients() {
  static const auto clients = testing::truncate(testing::synthetic_clients(3, 2, 5), 40);
  return clients;
}

FederationConfig base_config(std::size_t rounds, std::size_t epochs) {
  FederationConfig c;
  c.rounds = rounds;
  c.local_epochs = epochs;
  c.model = small_spec();
  c.aggregator = agg::AggregatorConfig::defaults(agg::Strategy::FedAvg);
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("client sampling sizes") {
  CHECK(sample_size(264, 0.25) == 66);
  CHECK(sample_size(3, 0.1) == 1);
  CHECK(sample_size(3, 1.0) == 3);
  CHECK(sample_size(10, 0.3) == 3);
  CHECK_THROWS_AS(sample_size(3, 0.0), InvalidArgument);
  CHECK_THROWS_AS(sample_size(3, 1.5), InvalidArgument);

  const auto all = sample_indices(5, 1.0, 7, 1);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4});
  const std::vector<std::string> ids = {"x", "a", "m"};
  CHECK(sample_clients(ids, 1.0, 1, 0) == ids);

  const auto subset = sample_indices(264, 0.25, 3, 9);
  CHECK(subset.size() == 66);
  CHECK(std::is_sorted(subset.begin(), subset.end()));
  CHECK(std::set<std::size_t>(subset.begin(), subset.end()).size() == 66);
  CHECK(subset.back() < 264);
  CHECK(subset == sample_indices(264, 0.25, 3, 9));
  CHECK(subset != sample_indices(264, 0.25, 4, 9));
  CHECK(subset != sample_indices(264, 0.25, 3, 10));
}

TEST_CASE("sampling is close to uniform over many rounds") {
  std::vector<std::size_t> hits(20, 0);
  const std::size_t rounds = 4000;
  for (std::size_t t = 1; t <= rounds; ++t) {
    for (auto i : sample_indices(20, 0.25, t, 2)) ++hits[i];
  }
  // Each client is picked with probability 1/4; allow five binomial sigmas.
  const double expected = rounds * 0.25;
  const double sigma = std::sqrt(rounds * 0.25 * 0.75);
  for (auto h : hits) CHECK(std::abs(static_cast<double>(h) - expected) < 5.0 * sigma);
}

TEST_CASE("zero rounds leave the initial model") {
  auto config = base_config(0, 3);
  const auto history = run_federated(config, three_clients());
  CHECK(history.rounds.empty());
  CHECK_FALSE(history.best_round.has_value());
  CHECK(history.best_global.bit_equal(history.initial_global));
  CHECK(history.final_global.bit_equal(nn::init_model(config.model, config.seed)));
  const auto ledger = account_communication(history.payload_bytes, history, 0);
  CHECK(ledger.total_bytes() == 0);
  CHECK(ledger.clients.empty());
}

TEST_CASE("single-client FedAvg follows plain local training") {
  for (auto arch : {nn::Architecture::MLP, nn::Architecture::GRU}) {
    CAPTURE(nn::to_string(arch));
    const std::vector<data::ClientData> one = {three_clients()[1]};
    auto config = base_config(6, 1);
    config.model = small_spec(arch);
    config.keep_trajectory = true;
    const auto history = run_federated(config, one);

    SettingConfig individual;
    individual.model = config.model;
    individual.max_epochs = 6;
    individual.patience = std::nullopt;
    individual.seed = config.seed;
    std::vector<nn::ParameterVector> epochs;
    const auto report = run_individual(individual, one.front(), 0,
                                       [&](std::size_t, const nn::ParameterVector& p, double) { epochs.push_back(p); });
    REQUIRE(epochs.size() == 6);
    REQUIRE(history.trajectory.size() == 6);
    for (std::size_t t = 0; t < 6; ++t) CHECK(history.trajectory[t].bit_equal(epochs[t]));
    CHECK(history.final_global.bit_equal(report.train.params));
  }
}

TEST_CASE("three clients, 30 rounds of 3 local epochs") {
  auto config = base_config(30, 3);
  const auto& clients = three_clients();
  const auto history = run_federated(config, clients);
  REQUIRE(history.rounds.size() == 30);
  std::size_t client_epochs = 0;
  for (const auto& r : history.rounds) {
    CHECK(r.sampled.size() == 3);
    for (const auto& c : r.clients) {
      const auto per_epoch = nn::steps_per_epoch(c.n_samples, config.model.batch_size);
      CHECK(c.local_steps % per_epoch == 0);
      client_epochs += c.local_steps / per_epoch;
    }
  }
  CHECK(client_epochs == 270);

  // best_round is the earliest argmin of the recorded validation MSE.
  std::size_t argmin = 0;
  for (std::size_t t = 0; t < history.rounds.size(); ++t) {
    if (history.rounds[t].validation_mse < history.rounds[argmin].validation_mse) argmin = t;
  }
  REQUIRE(history.best_round.has_value());
  CHECK(*history.best_round == argmin + 1);
  CHECK(history.rounds.back().validation_mse < history.rounds.front().validation_mse);

  // The aggregated metric is the sample-weighted mean of per-client values.
  for (const auto& r : history.rounds) {
    double sum = 0.0, n = 0.0;
    for (const auto& c : r.clients) {
      sum += c.validation_mse * static_cast<double>(c.validation_count);
      n += static_cast<double>(c.validation_count);
    }
    CHECK(r.validation_mse == doctest::Approx(sum / n).epsilon(1e-14));
  }
}

TEST_CASE("federation is deterministic") {
  auto config = base_config(4, 2);
  config.fraction = 0.5;
  config.model = small_spec(nn::Architecture::LSTM);
  const auto clients = testing::truncate(testing::synthetic_clients(4, 2, 8), 30);
  const auto a = run_federated(config, clients);
  const auto b = run_federated(config, clients);
  CHECK(a.final_global.bit_equal(b.final_global));
  CHECK(a.best_global.bit_equal(b.best_global));
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t t = 0; t < a.rounds.size(); ++t) {
    CHECK(a.rounds[t].sampled == b.rounds[t].sampled);
    CHECK(a.rounds[t].validation_mse == b.rounds[t].validation_mse);
  }
  config.seed += 1;
  CHECK_FALSE(run_federated(config, clients).final_global.bit_equal(a.final_global));
}

TEST_CASE("partial participation leaves unsampled clients out of the round") {
  auto config = base_config(5, 1);
  config.fraction = 0.5;
  const auto clients = testing::truncate(testing::synthetic_clients(4, 2, 8), 30);
  const auto history = run_federated(config, clients);
  for (const auto& r : history.rounds) {
    CHECK(r.sampled.size() == 2);
    std::uint64_t uplink = 0;
    for (const auto& c : r.clients) {
      const bool listed = std::find(r.sampled.begin(), r.sampled.end(), c.client_id) != r.sampled.end();
      CHECK(listed == c.sampled);
      if (!c.sampled) {
        CHECK(c.local_steps == 0);
        CHECK(c.uplink_bytes == 0);
        CHECK(c.downlink_bytes == 0);
        CHECK(std::isnan(c.train_loss));
      } else {
        CHECK(c.uplink_bytes == c.downlink_bytes);
      }
      uplink += c.uplink_bytes;
    }
    CHECK(uplink == r.uplink_bytes);
    CHECK(r.uplink_bytes + r.downlink_bytes == total_transfer_bytes(history.payload_bytes, 2, 1));
  }

  const auto ledger = account_communication(history.payload_bytes, history, 5);
  std::uint64_t client_up = 0;
  for (const auto& [id, traffic] : ledger.clients) {
    CHECK(traffic.uplink == traffic.downlink);
    client_up += traffic.uplink;
  }
  CHECK(client_up == ledger.server_received);
  CHECK(ledger.total_bytes() == total_transfer_bytes(history.payload_bytes, 2, 5));
  CHECK_THROWS_AS(account_communication(history.payload_bytes, history, 6), InvalidArgument);
}

TEST_CASE("FedProx with mu = 0 reproduces a FedAvg run") {
  auto config = base_config(3, 2);
  const auto fedavg = run_federated(config, three_clients());
  config.aggregator = agg::AggregatorConfig::defaults(agg::Strategy::FedProx);
  config.aggregator.mu = 0.0;
  CHECK(run_federated(config, three_clients()).final_global.bit_equal(fedavg.final_global));
  config.aggregator.mu = 1.0;
  CHECK_FALSE(run_federated(config, three_clients()).final_global.bit_equal(fedavg.final_global));
}

TEST_CASE("communication ledger") {
  const std::uint64_t lstm_payload = 586800;
  const std::vector<std::vector<std::string>> rounds(4, {"bs0", "bs1", "bs2"});
  const auto ledger = account_communication(lstm_payload, rounds, 4);
  for (const auto& [id, c] : ledger.clients) {
    CHECK(c.uplink == 2347200);  // 2.3472 MB
    CHECK(c.rounds == 4);
  }
  CHECK(ledger.server_one_directional() == 7041600);  // 7.0416 MB
  CHECK(ledger.server_received == ledger.server_sent);

  const auto zero = account_communication(lstm_payload, rounds, 0);
  CHECK(zero.total_bytes() == 0);
  CHECK(zero.rounds == 0);

  const std::vector<std::vector<std::string>> pairs(5, {"a", "b"});
  CHECK(account_communication(100000, pairs, 5).total_bytes() == 2000000);
  CHECK(total_transfer_bytes(100000, 2, 5) == 2000000);
}

TEST_CASE("centralized training pools client windows") {
  SettingConfig config;
  config.model = small_spec();
  config.max_epochs = 3;
  config.patience = std::nullopt;
  config.seed = 4;
  const auto& clients = three_clients();
  const auto pooled = run_centralized(config, clients);
  std::size_t expected = 0;
  for (const auto& c : clients) expected += c.train.size();
  CHECK(pooled.n_train == expected);

  const auto alone = run_centralized(config, std::vector<data::ClientData>{clients[2]});
  const auto individual = run_individual(config, clients[2]);
  CHECK(alone.train.params.bit_equal(individual.train.params));

  SettingConfig defaults;
  defaults.model = small_spec();
  const auto report = run_centralized(defaults, clients);
  CHECK(report.config.max_epochs == 270);
  REQUIRE(report.config.patience.has_value());
  CHECK(*report.config.patience == 50);
  CHECK(report.train.epochs_run <= 270);
  CHECK(report.train.epochs_run >= std::min<std::size_t>(270, report.train.best_epoch + 50));
}

TEST_CASE("individual training improves a learnable client and repeats exactly") {
  SettingConfig config;
  config.model = small_spec(nn::Architecture::CNN);
  config.max_epochs = 30;
  config.patience = std::nullopt;
  const auto& client = three_clients()[0];
  const auto first = run_individual(config, client);
  const auto second = run_individual(config, client);
  CHECK(first.train.params.bit_equal(second.train.params));
  CHECK(first.train.validation_loss == second.train.validation_loss);
  nn::Model model(config.model);
  const double initial =
      model.evaluate_mse(nn::init_model(config.model, config.seed), client.validation.inputs, client.validation.targets);
  CHECK(first.train.validation_loss.back() < initial);
}

TEST_CASE("local fine-tuning") {
  const auto spec = small_spec();
  const auto global = nn::init_model(spec, 1);
  const auto& client = three_clients()[0];
  CHECK(fine_tune(spec, global, client.train, 0).bit_equal(global));

  // A client whose targets are shifted away from what the others see.
  auto clients = three_clients();
  auto& odd = clients[0];
  odd.train.targets.array() += 0.5;
  odd.validation = odd.train;
  auto config = base_config(5, 2);
  const auto history = run_federated(config, clients);
  nn::Model model(spec);
  const double before = model.evaluate_mse(history.best_global, odd.validation.inputs, odd.validation.targets);
  const auto tuned = fine_tune(spec, history.best_global, odd.train, 5, 1);
  const double after = model.evaluate_mse(tuned, odd.validation.inputs, odd.validation.targets);
  CHECK(after <= before);
}
