#pragma once

// Forecasting networks with hand-written reverse-mode gradients.
//
// Every network maps a batch of flattened windows (B x T*d, timestep-major)
// to B x n_targets predictions. Parameters live in one flat vector whose
// layout is fixed by the ModelSpec.

#include "fedcast/common.hpp"
#include "fedcast/params.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fedcast::nn {

enum class Architecture { MLP, RNN, LSTM, GRU, CNN };

const char* to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct ModelSpec {
  Architecture architecture = Architecture::LSTM;
  std::size_t window = 10;
  std::size_t n_features = 11;
  std::size_t n_targets = 5;

  std::vector<std::size_t> mlp_hidden = {256, 128, 64};
  std::size_t recurrent_units = 128;
  std::size_t head_units = 128;
  std::vector<std::size_t> conv_filters = {16, 16, 32, 32};
  std::size_t kernel = 3;

  double learning_rate = 1e-3;
  std::size_t batch_size = 128;

  static ModelSpec standard(Architecture a, std::size_t window = 10, std::size_t n_features = 11);

  std::size_t input_size() const { return window * n_features; }
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

/// Closed-form trainable parameter count for a spec.
std::size_t parameter_count(const ModelSpec& spec);

Layout make_layout(const ModelSpec& spec);

/// Architecture-specific forward/backward kernels. forward() caches the
/// activations that the following backward() consumes, so one instance must
/// not be shared between threads.
class Network {
 public:
  virtual ~Network() = default;
  const Layout& layout() const { return layout_; }
  virtual void init(std::span<double> params, std::uint64_t seed) const = 0;
  virtual Matrix forward(std::span<const double> params, const Matrix& inputs) = 0;
  /// Accumulates dLoss/dparams into `grad` given dLoss/doutput of the last forward.
  virtual void backward(std::span<const double> params, const Matrix& d_output, std::span<double> grad) = 0;

 protected:
  Layout layout_;
};

std::unique_ptr<Network> make_network(const ModelSpec& spec);

class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const Layout& layout() const { return layout_; }

  ParameterVector init(std::uint64_t seed) const;

  /// Predictions for every row of `inputs`, evaluated in chunks.
  Matrix predict(const ParameterVector& params, const Matrix& inputs);

  /// MSE of predictions against targets, evaluated in chunks.
  double evaluate_mse(const ParameterVector& params, const Matrix& inputs, const Matrix& targets);

  /// Batch MSE; writes (not accumulates) its gradient into `grad`.
  double loss_and_gradient(const ParameterVector& params, const Matrix& inputs, const Matrix& targets,
                           std::span<double> grad);

 private:
  void check_inputs(const ParameterVector& params, const Matrix& inputs) const;

  ModelSpec spec_;
  Layout layout_;
  std::unique_ptr<Network> net_;
  AlignedBuffer grad_scratch_;
};

ParameterVector init_model(const ModelSpec& spec, std::uint64_t seed);
Matrix forward(const ModelSpec& spec, const ParameterVector& params, const Matrix& inputs);
double mse_loss(const Matrix& pred, const Matrix& target);
ParameterVector backward(const ModelSpec& spec, const ParameterVector& params, const Matrix& inputs,
                         const Matrix& targets);

}  // namespace fedcast::nn
