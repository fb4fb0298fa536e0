#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace fedcast;
using namespace fedcast::agg;
using fedcast::testing::vec;

namespace {

ClientUpdate update(const std::string& id, std::vector<double> delta, std::size_t n, std::size_t tau = 1) {
  ClientUpdate u;
  u.client_id = id;
  u.delta = vec(std::move(delta));
  u.n_samples = n;
  u.local_steps = tau;
  return u;
}

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

std::vector<ClientUpdate> random_updates(std::size_t clients, std::size_t dim, std::uint64_t seed,
                                         bool varied_steps = false) {
  std::vector<ClientUpdate> out;
  Rng rng(seed);
  for (std::size_t i = 0; i < clients; ++i) {
    const std::size_t n = 1 + rng.below(500);
    const std::size_t tau = varied_steps ? 1 + rng.below(9) : 4;
    out.push_back(update("c" + std::to_string(i), random_values(dim, seed * 31 + i), n, tau));
  }
  return out;
}

double max_abs_diff(const nn::ParameterVector& a, const nn::ParameterVector& b) {
  return (a.as_eigen() - b.as_eigen()).cwiseAbs().maxCoeff();
}

/// Plain-loop weighted sum of deltas.
std::vector<double> oracle_weighted_delta(const std::vector<ClientUpdate>& updates) {
  double n = 0.0;
  for (const auto& u : updates) n += static_cast<double>(u.n_samples);
  std::vector<double> out(updates.front().delta.size(), 0.0);
  for (const auto& u : updates) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += static_cast<double>(u.n_samples) / n * u.delta[k];
  }
  return out;
}

}  // namespace

TEST_CASE("weighted_delta examples") {
  const std::vector<ClientUpdate> one = {update("a", {0.5, -2.0}, 7)};
  CHECK(weighted_delta(one).bit_equal(one.front().delta));

  const std::vector<ClientUpdate> two = {update("a", {1.0}, 1), update("b", {3.0}, 3)};
  CHECK(weighted_delta(two)[0] == doctest::Approx(2.5).epsilon(1e-15));

  const std::vector<ClientUpdate> equal = {update("a", {1.0, 4.0}, 5), update("b", {3.0, 0.0}, 5)};
  const auto mean = weighted_delta(equal);
  CHECK(mean[0] == 2.0);
  CHECK(mean[1] == 2.0);

  const auto many = random_updates(6, 40, 3);
  const auto oracle = oracle_weighted_delta(many);
  const auto got = weighted_delta(many);
  for (std::size_t k = 0; k < oracle.size(); ++k) CHECK(got[k] == doctest::Approx(oracle[k]).epsilon(1e-13));

  CHECK_THROWS_AS(weighted_delta({}), InvalidArgument);
  std::vector<ClientUpdate> mixed = {update("a", {1.0}, 1), update("b", {1.0, 2.0}, 1)};
  CHECK_THROWS_AS(weighted_delta(mixed), DimensionMismatch);
}

TEST_CASE("aggregate examples") {
  const auto global = vec({0.0});
  const auto state = ServerState::zeros(global.layout());
  const std::vector<ClientUpdate> two = {update("a", {1.0}, 1), update("b", {3.0}, 3)};

  const auto fedavg = aggregate(AggregatorConfig::defaults(Strategy::FedAvg), state, global, two);
  CHECK(fedavg.global[0] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(fedavg.state.round == 1);

  const std::vector<ClientUpdate> outlier = {update("a", {1.0}, 1), update("b", {3.0}, 1), update("c", {100.0}, 1)};
  CHECK(aggregate(AggregatorConfig::defaults(Strategy::MedianAvg), state, global, outlier).global[0] == 3.0);
  const std::vector<ClientUpdate> even = {update("a", {1.0}, 1), update("b", {3.0}, 1), update("c", {100.0}, 1),
                                          update("d", {-7.0}, 1)};
  CHECK(aggregate(AggregatorConfig::defaults(Strategy::MedianAvg), state, global, even).global[0] == 2.0);

  auto adagrad = AggregatorConfig::defaults(Strategy::FedAdagrad);
  CHECK(adagrad.server_lr == 0.1);
  CHECK(adagrad.lambda == 1e-3);
  CHECK(adagrad.beta1 == 0.0);
  const auto step = aggregate(adagrad, state, global, {update("a", {1.0}, 1)});
  CHECK(step.state.momentum[0] == 1.0);
  CHECK(step.global[0] == doctest::Approx(0.1 / 1.001).epsilon(1e-14));
  CHECK(step.global[0] == doctest::Approx(0.0999001).epsilon(1e-6));

  CHECK_THROWS_AS(aggregate(AggregatorConfig::defaults(Strategy::FedAvg), state, global, {}), InvalidArgument);
  CHECK_THROWS_AS(aggregate(AggregatorConfig::defaults(Strategy::FedAvg), state, vec({0.0, 0.0}), two),
                  DimensionMismatch);
  CHECK_THROWS_AS(strategy_from_string("FedSGD"), InvalidArgument);
  CHECK_THROWS_AS(aggregate(AggregatorConfig::defaults(Strategy::FedNova), state, global, {update("a", {1.0}, 1, 0)}),
                  InvalidArgument);
}

TEST_CASE("adaptive strategies follow the per-coordinate recurrences over several rounds") {
  for (auto s : {Strategy::FedAdagrad, Strategy::FedYogi, Strategy::FedAdam}) {
    CAPTURE(to_string(s));
    auto config = AggregatorConfig::defaults(s);
    config.server_lr = 0.05;
    config.lambda = 1e-2;
    const std::size_t dim = 25;
    auto global = vec(random_values(dim, 1));
    auto state = ServerState::zeros(global.layout());
    testing::AdaptiveOracle oracle{std::vector<double>(global.values().begin(), global.values().end()),
                                   std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
    for (std::uint64_t round = 0; round < 6; ++round) {
      const auto updates = random_updates(4, dim, 100 + round);
      oracle.step(s, oracle_weighted_delta(updates), config.server_lr, config.beta1, config.beta2, config.lambda);
      auto next = aggregate(config, state, global, updates);
      global = std::move(next.global);
      state = std::move(next.state);
      for (std::size_t k = 0; k < dim; ++k) {
        CHECK(global[k] == doctest::Approx(oracle.w[k]).epsilon(1e-12));
        CHECK(state.momentum[k] == doctest::Approx(oracle.u[k]).epsilon(1e-12));
        if (s == Strategy::FedAdam) CHECK(state.momentum[k] >= 0.0);
      }
    }
  }
}

TEST_CASE("FedAdagrad accumulator never decreases") {
  auto config = AggregatorConfig::defaults(Strategy::FedAdagrad);
  auto global = vec(std::vector<double>(10, 0.0));
  auto state = ServerState::zeros(global.layout());
  for (std::uint64_t r = 0; r < 8; ++r) {
    const auto before = state.momentum;
    auto next = aggregate(config, state, global, random_updates(3, 10, 50 + r));
    for (std::size_t k = 0; k < 10; ++k) CHECK(next.state.momentum[k] >= before[k]);
    global = next.global;
    state = next.state;
  }
}

TEST_CASE("FedAvgM and FedNova against hand recurrences") {
  const std::size_t dim = 12;
  SUBCASE("FedAvgM") {
    auto config = AggregatorConfig::defaults(Strategy::FedAvgM);
    config.beta = 0.9;
    auto global = vec(random_values(dim, 2));
    auto state = ServerState::zeros(global.layout());
    std::vector<double> w(global.values().begin(), global.values().end()), u(dim, 0.0);
    for (std::uint64_t r = 0; r < 5; ++r) {
      const auto updates = random_updates(3, dim, 200 + r);
      const auto dW = oracle_weighted_delta(updates);
      for (std::size_t k = 0; k < dim; ++k) {
        u[k] = 0.9 * u[k] + dW[k];
        w[k] += u[k];
      }
      auto next = aggregate(config, state, global, updates);
      global = next.global;
      state = next.state;
      for (std::size_t k = 0; k < dim; ++k) CHECK(global[k] == doctest::Approx(w[k]).epsilon(1e-12));
    }
  }
  SUBCASE("FedNova with uneven local steps") {
    auto config = AggregatorConfig::defaults(Strategy::FedNova);
    config.rho = 0.5;
    auto global = vec(random_values(dim, 3));
    auto state = ServerState::zeros(global.layout());
    std::vector<double> w(global.values().begin(), global.values().end()), u(dim, 0.0);
    for (std::uint64_t r = 0; r < 4; ++r) {
      const auto updates = random_updates(4, dim, 300 + r, true);
      double n = 0.0, n_tau = 0.0;
      for (const auto& c : updates) {
        n += static_cast<double>(c.n_samples);
        n_tau += static_cast<double>(c.n_samples * c.local_steps);
      }
      std::vector<double> normalized(dim, 0.0);
      for (const auto& c : updates) {
        const double coef = (n_tau / n) * static_cast<double>(c.n_samples) / (n * static_cast<double>(c.local_steps));
        for (std::size_t k = 0; k < dim; ++k) normalized[k] += coef * c.delta[k];
      }
      for (std::size_t k = 0; k < dim; ++k) {
        u[k] = 0.5 * u[k] + normalized[k];
        w[k] += u[k];
      }
      auto next = aggregate(config, state, global, updates);
      global = next.global;
      state = next.state;
      for (std::size_t k = 0; k < dim; ++k) CHECK(global[k] == doctest::Approx(w[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("strategy reductions") {
  const std::size_t dim = 30;
  const auto global = vec(random_values(dim, 9));
  const auto state = ServerState::zeros(global.layout());
  const auto fedavg_config = AggregatorConfig::defaults(Strategy::FedAvg);
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    const auto updates = random_updates(5, dim, 400 + trial);
    const auto reference = aggregate(fedavg_config, state, global, updates).global;

    auto avgm = AggregatorConfig::defaults(Strategy::FedAvgM);
    avgm.beta = 0.0;
    CHECK(aggregate(avgm, state, global, updates).global.bit_equal(reference));

    // random_updates gives every client the same number of local steps.
    CHECK(aggregate(AggregatorConfig::defaults(Strategy::FedNova), state, global, updates).global.bit_equal(reference));

    auto prox = AggregatorConfig::defaults(Strategy::FedProx);
    prox.mu = 0.5;
    CHECK(aggregate(prox, state, global, updates).global.bit_equal(reference));

    auto equal = updates;
    for (auto& u : equal) u.n_samples = 10;
    const auto simple = aggregate(AggregatorConfig::defaults(Strategy::SimpleAvg), state, global, equal).global;
    CHECK(max_abs_diff(simple, aggregate(fedavg_config, state, global, equal).global) < 1e-12);
  }
}

TEST_CASE("every strategy is invariant to update order and keeps the layout") {
  const std::size_t dim = 16;
  const auto global = vec(random_values(dim, 5));
  auto updates = random_updates(5, dim, 77, true);
  for (auto s : all_strategies()) {
    const std::string name = to_string(s);
    CAPTURE(name);
    const auto config = AggregatorConfig::defaults(s);
    const auto state = ServerState::zeros(global.layout());
    const auto reference = aggregate(config, state, global, updates);
    CHECK(reference.global.layout() == global.layout());
    auto shuffled = updates;
    for (std::uint64_t p = 0; p < 4; ++p) {
      Rng rng(p);
      const auto order = rng.permutation(shuffled.size());
      std::vector<ClientUpdate> permuted;
      for (auto i : order) permuted.push_back(updates[i]);
      const auto again = aggregate(config, state, global, permuted);
      CHECK(again.global.bit_equal(reference.global));
      CHECK(again.state.momentum.bit_equal(reference.state.momentum));
    }
  }
}

TEST_CASE("median ignores one corrupted client") {
  const std::size_t dim = 8;
  const auto global = vec(std::vector<double>(dim, 0.0));
  const auto state = ServerState::zeros(global.layout());
  const auto updates = random_updates(5, dim, 11);
  const auto config = AggregatorConfig::defaults(Strategy::MedianAvg);
  const auto clean = aggregate(config, state, global, updates).global;
  for (double corruption : {1e6, -1e6}) {
    auto bad = updates;
    for (auto& v : bad[2].delta.values()) v = corruption;
    // The corrupted value is now an extreme; the result is the sorted middle.
    for (std::size_t k = 0; k < dim; ++k) {
      std::vector<double> column;
      for (const auto& u : bad) column.push_back(u.delta[k]);
      std::sort(column.begin(), column.end());
      CHECK(aggregate(config, state, global, bad).global[k] == column[2]);
    }
  }
  // A corruption that stays on the same side of the median changes nothing.
  auto bad = updates;
  for (std::size_t k = 0; k < dim; ++k) {
    std::vector<double> column;
    for (const auto& u : updates) column.push_back(u.delta[k]);
    const double hi = *std::max_element(column.begin(), column.end());
    const auto it = std::find(column.begin(), column.end(), hi);
    bad[static_cast<std::size_t>(it - column.begin())].delta[k] = hi + 1e9;
  }
  CHECK(aggregate(config, state, global, bad).global.bit_equal(clean));
}

TEST_CASE("proximal term") {
  const auto w = vec({1.0});
  const auto anchor = vec({0.0});
  CHECK(proximal_loss_term(w, anchor, 0.0) == 0.0);
  CHECK(proximal_loss_term(w, anchor, 0.1) == doctest::Approx(0.05).epsilon(1e-15));
  std::vector<double> grad{0.0};
  add_proximal_gradient(grad, w, anchor, 0.1);
  CHECK(grad[0] == doctest::Approx(0.1).epsilon(1e-15));
  std::vector<double> untouched{0.25};
  add_proximal_gradient(untouched, w, anchor, 0.0);
  CHECK(untouched[0] == 0.25);
  CHECK(proximal_loss_term(vec({3.0, 4.0}), vec({0.0, 0.0}), 2.0) == 25.0);
  CHECK_THROWS_AS(proximal_loss_term(w, vec({0.0, 0.0}), 1.0), DimensionMismatch);
}

TEST_CASE("coordinate median of even counts averages the central pair") {
  const auto m = coordinate_median({vec({1.0, 10.0}), vec({4.0, -2.0}), vec({2.0, 0.0}), vec({8.0, 5.0})});
  CHECK(m[0] == 3.0);
  CHECK(m[1] == 2.5);
}

TEST_CASE("hyper-parameter grids") {
  CHECK(expand_grid(Strategy::FedProx, reference_grid(Strategy::FedProx)).size() == 4);
  CHECK(expand_grid(Strategy::FedAvgM, reference_grid(Strategy::FedAvgM)).size() == 6);
  CHECK(expand_grid(Strategy::FedNova, reference_grid(Strategy::FedNova)).size() == 5);
  for (auto s : {Strategy::FedAdagrad, Strategy::FedYogi, Strategy::FedAdam}) {
    const auto cells = expand_grid(s, reference_grid(s));
    CHECK(cells.size() == 12);
    // lambda sorts before server_lr, so server_lr varies fastest.
    CHECK(cells[0].lambda == 1e-4);
    CHECK(cells[0].server_lr == 1e-2);
    CHECK(cells[1].server_lr == 1e-1);
    CHECK(cells[11].lambda == 1e-1);
    CHECK(cells[11].server_lr == 1.0);
    CHECK(cells[0].beta1 == AggregatorConfig::defaults(s).beta1);
  }
  const auto plain = expand_grid(Strategy::FedAvg, {});
  REQUIRE(plain.size() == 1);
  CHECK(plain[0] == AggregatorConfig::defaults(Strategy::FedAvg));

  auto c = AggregatorConfig::defaults(Strategy::FedAdam);
  set_hyperparameter(c, "eta", 0.5);
  set_hyperparameter(c, "tau", 0.25);
  CHECK(c.server_lr == 0.5);
  CHECK(c.lambda == 0.25);
  CHECK_THROWS_AS(set_hyperparameter(c, "gamma", 1.0), InvalidArgument);
  CHECK_THROWS_AS(expand_grid(Strategy::FedProx, {{"mu", {}}}), InvalidArgument);
  CHECK_THROWS_AS(expand_grid(Strategy::FedAvgM, {{"beta", {1.0}}}), InvalidArgument);
}
