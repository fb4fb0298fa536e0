#include "support.hpp"

#include "fedcast/model.hpp"
#include "fedcast/optim.hpp"
#include "fedcast/train.hpp"

#include <doctest.h>

#include <filesystem>

using namespace fedcast;
using namespace fedcast::nn;
using fedcast::testing::random_matrix;

namespace {

data::WindowedDataset random_windows(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  data::WindowedDataset w;
  w.window = spec.window;
  w.n_features = spec.n_features;
  w.inputs = random_matrix(n, spec.input_size(), seed, 0.0, 1.0);
  // A smooth function of the last timestep, so the data is learnable.
  w.targets.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.n_targets));
  const auto last = static_cast<Eigen::Index>((spec.window - 1) * spec.n_features);
  for (Eigen::Index i = 0; i < w.targets.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.targets.cols(); ++j) {
      w.targets(i, j) = 0.5 * w.inputs(i, last + j) + 0.25 * w.inputs(i, last + (j + 1) % w.targets.cols());
    }
  }
  return w;
}

}  // namespace

TEST_CASE("closed-form parameter counts at d = 11, T = 10") {
  CHECK(parameter_count(ModelSpec::standard(Architecture::MLP)) == 69893);
  CHECK(parameter_count(ModelSpec::standard(Architecture::RNN)) == 35077);
  CHECK(parameter_count(ModelSpec::standard(Architecture::LSTM)) == 88837);
  CHECK(parameter_count(ModelSpec::standard(Architecture::GRU)) == 70917);
  CHECK(parameter_count(ModelSpec::standard(Architecture::CNN)) == 21237);
  for (auto a : testing::all_architectures()) {
    const auto spec = ModelSpec::standard(a);
    CAPTURE(to_string(a));
    CHECK(init_model(spec, 1).size() == parameter_count(spec));
    CHECK(make_layout(spec) == Model(spec).layout());
  }
}

TEST_CASE("initialization is deterministic and fan-in scaled") {
  const auto spec = ModelSpec::standard(Architecture::MLP);
  const auto a = init_model(spec, 42);
  CHECK(a.bit_equal(init_model(spec, 42)));
  CHECK_FALSE(a.bit_equal(init_model(spec, 43)));
  const auto w = a.tensor("dense0.weight");
  const double bound = 1.0 / std::sqrt(110.0);
  double max_abs = 0.0;
  for (double v : w) max_abs = std::max(max_abs, std::abs(v));
  CHECK(max_abs <= bound);
  CHECK(max_abs > 0.9 * bound);
}

TEST_CASE("zero parameters predict zeros") {
  for (auto a : testing::all_architectures()) {
    const auto spec = ModelSpec::standard(a);
    const ParameterVector zeros(make_layout(spec));
    const auto y = forward(spec, zeros, random_matrix(3, spec.input_size(), 1));
    CHECK(y.rows() == 3);
    CHECK(y.cols() == 5);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("hand-sized MLP matches a pencil-and-paper forward pass") {
  ModelSpec spec;
  spec.architecture = Architecture::MLP;
  spec.window = 1;
  spec.n_features = 1;
  spec.n_targets = 1;
  spec.mlp_hidden = {1};
  ParameterVector p(make_layout(spec));
  p.tensor("dense0.weight")[0] = 2.0;
  p.tensor("dense0.bias")[0] = -1.0;
  p.tensor("output.weight")[0] = 3.0;
  p.tensor("output.bias")[0] = 0.5;
  Matrix x(2, 1);
  x << 2.0, 0.2;
  const auto y = forward(spec, p, x);
  CHECK(y(0, 0) == 3.0 * 3.0 + 0.5);  // relu(2*2 - 1) = 3
  CHECK(y(1, 0) == 0.5);              // relu(0.4 - 1) = 0
}

TEST_CASE("CNN maps a (1, 10, 11) window to five outputs") {
  const auto spec = ModelSpec::standard(Architecture::CNN);
  const auto y = forward(spec, init_model(spec, 3), random_matrix(1, 110, 4));
  CHECK(y.rows() == 1);
  CHECK(y.cols() == 5);
  CHECK(y.allFinite());
}

TEST_CASE("input shape errors") {
  const auto spec = ModelSpec::standard(Architecture::GRU);
  Model model(spec);
  const auto p = model.init(1);
  CHECK_THROWS_AS(model.predict(p, random_matrix(2, 100, 1)), DimensionMismatch);
  CHECK_THROWS_AS(model.predict(init_model(ModelSpec::standard(Architecture::LSTM), 1), random_matrix(2, 110, 1)),
                  DimensionMismatch);
  CHECK_THROWS_AS(mse_loss(Matrix::Zero(2, 5), Matrix::Zero(2, 4)), DimensionMismatch);
}

TEST_CASE("mse_loss examples") {
  Matrix a(1, 2), b(1, 2);
  a << 0, 0;
  b << 1, 1;
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(a, b) == 1.0);
  Matrix p(2, 2), t(2, 2);
  p << 0, 0, 2, 2;
  t << 1, 1, 1, 1;
  CHECK(mse_loss(p, t) == 1.0);
}

TEST_CASE("gradients match finite differences on tiny models, every coordinate") {
  for (auto a : testing::all_architectures()) {
    CAPTURE(to_string(a));
    const auto spec = testing::tiny_spec(a);
    Model model(spec);
    const auto params = model.init(11);
    const auto x = random_matrix(4, spec.input_size(), 12);
    const auto y = random_matrix(4, spec.n_targets, 13);
    std::vector<double> grad(params.size());
    model.loss_and_gradient(params, x, y, grad);
    std::vector<std::size_t> all(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto check = testing::finite_difference_check(model, params, x, y, grad, all);
    CHECK(check.checked == params.size());
    CHECK(check.max_relative_error < 1e-4);

    // A one-percent error in a single coordinate survives the smaller-step retry.
    auto wrong = grad;
    const std::size_t victim = params.size() / 2;
    wrong[victim] = grad[victim] * 1.01 + 1e-5;
    const auto caught = testing::finite_difference_check(model, params, x, y, wrong, all);
    CHECK(caught.max_relative_error > 1e-3);
    CHECK(caught.worst_index == victim);
  }
}

TEST_CASE("gradient vanishes at a perfect fit and ignores row duplication") {
  ModelSpec linear;
  linear.architecture = Architecture::MLP;
  linear.window = 2;
  linear.n_features = 3;
  linear.n_targets = 2;
  linear.mlp_hidden = {};
  Model model(linear);
  auto p = model.init(5);
  const auto x = random_matrix(6, 6, 6);
  const Matrix y = model.predict(p, x);
  std::vector<double> g(p.size());
  model.loss_and_gradient(p, x, y, g);
  for (double v : g) CHECK(v == 0.0);

  for (auto a : testing::all_architectures()) {
    const auto spec = testing::tiny_spec(a);
    Model m(spec);
    const auto q = m.init(7);
    const auto xs = random_matrix(3, spec.input_size(), 8);
    const auto ys = random_matrix(3, spec.n_targets, 9);
    Matrix x2(6, xs.cols()), y2(6, ys.cols());
    x2 << xs, xs;
    y2 << ys, ys;
    std::vector<double> g1(q.size()), g2(q.size());
    m.loss_and_gradient(q, xs, ys, g1);
    m.loss_and_gradient(q, x2, y2, g2);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(g1[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward is equivariant to batch permutation") {
  for (auto a : testing::all_architectures()) {
    const auto spec = ModelSpec::standard(a);
    Model model(spec);
    const auto p = model.init(2);
    const auto x = random_matrix(5, spec.input_size(), 3);
    Matrix shuffled(5, x.cols());
    const int order[5] = {3, 0, 4, 1, 2};
    for (int i = 0; i < 5; ++i) shuffled.row(i) = x.row(order[i]);
    const auto y = model.predict(p, x);
    const auto ys = model.predict(p, shuffled);
    for (int i = 0; i < 5; ++i) CHECK((ys.row(i) - y.row(order[i])).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("Adam single and repeated steps") {
  const auto layout = testing::vec({0.0}).layout();
  auto p = testing::vec({0.0});
  auto state = OptimizerState::fresh(layout);
  const std::vector<double> zero{0.0};
  adam_step(state, p, zero, 1e-3);
  CHECK(p[0] == 0.0);

  p = testing::vec({0.0});
  state = OptimizerState::fresh(layout);
  const std::vector<double> one{1.0};
  adam_step(state, p, one, 1e-3);
  CHECK(p[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(p[0] > -1e-3);

  // Scripted recurrences for two steps of a constant gradient g = 0.5.
  p = testing::vec({1.0});
  state = OptimizerState::fresh(layout);
  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * 0.5;
    v = 0.999 * v + 0.001 * 0.25;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    w -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
    adam_step(state, p, std::vector<double>{0.5}, 1e-2);
  }
  CHECK(p[0] == doctest::Approx(w).epsilon(1e-15));
  CHECK(state.step == 2);
  CHECK_THROWS_AS(adam_step(state, p, std::vector<double>{1.0, 2.0}, 1e-3), DimensionMismatch);
}

TEST_CASE("local training: step count, zero epochs and improvement") {
  auto spec = testing::tiny_spec(Architecture::MLP);
  spec.batch_size = 128;
  const auto train = random_windows(spec, 300, 21);
  const auto params = init_model(spec, 4);

  const auto none = train_local(spec, params, train, {}, 0);
  CHECK(none.local_steps == 0);
  CHECK(none.params.bit_equal(params));

  const auto three = train_local(spec, params, train, {}, 3);
  CHECK(three.local_steps == 9);
  CHECK(steps_per_epoch(300, 128) == 3);

  spec.batch_size = 32;
  const auto long_run = train_local(spec, params, train, train, 50);
  CHECK(long_run.train_loss.back() < long_run.train_loss.front());
  CHECK(long_run.validation_loss.size() == 50);
  Model model(spec);
  CHECK(model.evaluate_mse(long_run.params, train.inputs, train.targets) <
        model.evaluate_mse(params, train.inputs, train.targets));
}

TEST_CASE("training is deterministic and mu = 0 matches plain training") {
  const auto spec = testing::tiny_spec(Architecture::GRU);
  const auto train = random_windows(spec, 100, 3);
  const auto params = init_model(spec, 9);
  const auto a = train_local(spec, params, train, {}, 4, std::nullopt, 17);
  const auto b = train_local(spec, params, train, {}, 4, std::nullopt, 17);
  CHECK(a.params.bit_equal(b.params));
  CHECK(a.train_loss == b.train_loss);
  const auto prox = train_local(spec, params, train, {}, 4, Proximal{0.0, params}, 17);
  CHECK(prox.params.bit_equal(a.params));
  const auto pulled = train_local(spec, params, train, {}, 4, Proximal{10.0, params}, 17);
  CHECK_FALSE(pulled.params.bit_equal(a.params));
}

TEST_CASE("training in several calls follows one long call") {
  const auto spec = testing::tiny_spec(Architecture::LSTM);
  const auto train = random_windows(spec, 40, 8);
  const auto params = init_model(spec, 1);
  LocalTrainer whole(spec, 5), pieces(spec, 5);
  const auto once = whole.train(params, train, {}, 4);
  auto p = params;
  for (int i = 0; i < 4; ++i) p = pieces.train(p, train, {}, 1).params;
  CHECK(p.bit_equal(once.params));
  CHECK(pieces.epochs_done() == 4);
}

TEST_CASE("early stopping on a scripted loss schedule") {
  // Improves until epoch 3 and stays flat afterwards.
  const std::vector<double> losses = {5, 4, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3};
  std::size_t last_best = 0;
  const auto outcome = run_with_early_stopping(
      12, 5, [&](std::size_t epoch) { return losses[epoch - 1]; }, [&](std::size_t epoch) { last_best = epoch; });
  CHECK(outcome.epochs_run == 8);
  CHECK(outcome.best_epoch == 3);
  CHECK(last_best == 3);

  const auto improving = run_with_early_stopping(
      20, 2, [](std::size_t epoch) { return 100.0 - static_cast<double>(epoch); }, {});
  CHECK(improving.epochs_run == 20);
  CHECK(improving.best_epoch == 20);
  CHECK_THROWS_AS(EarlyStopping(0), InvalidArgument);
}

TEST_CASE("early-stopped training returns the best validation parameters") {
  const auto spec = testing::tiny_spec(Architecture::RNN);
  const auto train = random_windows(spec, 64, 2);
  const auto val = random_windows(spec, 32, 3);
  const auto report = train_with_early_stopping(spec, init_model(spec, 1), train, val, 270, 50, 3);
  CHECK(report.epochs_run <= 270);
  REQUIRE(report.best_epoch >= 1);
  Model model(spec);
  const double best = *std::min_element(report.validation_loss.begin(), report.validation_loss.end());
  CHECK(model.evaluate_mse(report.params, val.inputs, val.targets) == best);
  CHECK(report.validation_loss[report.best_epoch - 1] == best);
}

TEST_CASE("parameter serialization") {
  const auto spec = ModelSpec::standard(Architecture::GRU);
  const auto p = init_model(spec, 77);
  const auto bytes = serialize_params(p);
  CHECK(bytes.size() == serialized_size(p.layout()));
  CHECK(deserialize_params(bytes).bit_equal(p));
  CHECK(deserialize_params(bytes, p.layout()).bit_equal(p));

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(deserialize_params(truncated), CorruptBuffer);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_params(bad_magic), CorruptBuffer);
  CHECK_THROWS_AS(deserialize_params(bytes, make_layout(ModelSpec::standard(Architecture::RNN))), CorruptBuffer);

  const ParameterVector empty{Layout("empty")};
  const auto header_only = serialize_params(empty);
  CHECK(header_only.size() == header_bytes(empty.layout()));
  CHECK(deserialize_params(header_only).size() == 0);

  // Values are little-endian IEEE doubles after the header.
  double first = 0.0;
  std::memcpy(&first, bytes.data() + header_bytes(p.layout()), 8);
  CHECK(first == p[0]);

  // MLP payload: 8 bytes per parameter plus the layout header, close to the
  // 563.2 KB the MLP row of the communication table reports.
  const auto mlp = serialized_size(make_layout(ModelSpec::standard(Architecture::MLP)));
  CHECK(mlp - header_bytes(make_layout(ModelSpec::standard(Architecture::MLP))) == 559144);
  CHECK(std::abs(static_cast<double>(mlp) - 563200.0) / 563200.0 < 0.01);

  const auto path = std::filesystem::temp_directory_path() / "fedcast_checkpoint_test.bin";
  save_checkpoint(path.string(), p);
  CHECK(load_checkpoint(path.string()).bit_equal(p));
}
