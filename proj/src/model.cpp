#include "fedcast/model.hpp"

#include "networks.hpp"

#include <algorithm>

namespace fedcast::nn {

namespace {
constexpr Eigen::Index kEvalChunk = 512;
}

const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::MLP: return "MLP";
    case Architecture::RNN: return "RNN";
    case Architecture::LSTM: return "LSTM";
    case Architecture::GRU: return "GRU";
    case Architecture::CNN: return "CNN";
  }
  return "?";
}

Architecture architecture_from_string(const std::string& s) {
  for (auto a : {Architecture::MLP, Architecture::RNN, Architecture::LSTM, Architecture::GRU, Architecture::CNN}) {
    if (s == to_string(a)) return a;
  }
  throw InvalidArgument("unknown architecture '" + s + "'");
}

ModelSpec ModelSpec::standard(Architecture a, std::size_t window, std::size_t n_features) {
  ModelSpec spec;
  spec.architecture = a;
  spec.window = window;
  spec.n_features = n_features;
  return spec;
}

void ModelSpec::validate() const {
  if (window == 0 || n_features == 0 || n_targets == 0) throw InvalidArgument("model dimensions must be positive");
  if (n_targets > n_features) throw InvalidArgument("more targets than features");
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  switch (architecture) {
    case Architecture::MLP:
      if (std::find(mlp_hidden.begin(), mlp_hidden.end(), 0u) != mlp_hidden.end())
        throw InvalidArgument("MLP hidden sizes must be positive");
      break;
    case Architecture::RNN:
    case Architecture::LSTM:
    case Architecture::GRU:
      if (recurrent_units == 0 || head_units == 0) throw InvalidArgument("recurrent sizes must be positive");
      break;
    case Architecture::CNN:
      if (conv_filters.empty() || head_units == 0 || kernel % 2 == 0)
        throw InvalidArgument("CNN needs filters, a head and an odd kernel");
      if (std::find(conv_filters.begin(), conv_filters.end(), 0u) != conv_filters.end())
        throw InvalidArgument("CNN filter counts must be positive");
      break;
  }
}

std::size_t parameter_count(const ModelSpec& s) {
  const auto dense = [](std::size_t in, std::size_t out) { return (in + 1) * out; };
  const std::size_t head = dense(s.recurrent_units, s.head_units) + dense(s.head_units, s.n_targets);
  const std::size_t cell = s.n_features * s.recurrent_units + s.recurrent_units * s.recurrent_units + s.recurrent_units;
  switch (s.architecture) {
    case Architecture::MLP: {
      std::size_t n = 0, in = s.input_size();
      for (auto h : s.mlp_hidden) {
        n += dense(in, h);
        in = h;
      }
      return n + dense(in, s.n_targets);
    }
    case Architecture::RNN: return cell + head;
    case Architecture::LSTM: return 4 * cell + head;
    case Architecture::GRU: return 3 * cell + head;
    case Architecture::CNN: {
      std::size_t n = 0, in = 1;
      for (auto f : s.conv_filters) {
        n += (in * s.kernel * s.kernel + 1) * f;
        in = f;
      }
      return n + dense(in, s.head_units) + dense(s.head_units, s.n_targets);
    }
  }
  return 0;
}

std::unique_ptr<Network> make_network(const ModelSpec& spec) {
  spec.validate();
  switch (spec.architecture) {
    case Architecture::MLP: return detail::make_mlp(spec);
    case Architecture::RNN:
    case Architecture::LSTM:
    case Architecture::GRU: return detail::make_recurrent(spec);
    case Architecture::CNN: return detail::make_cnn(spec);
  }
  throw InvalidArgument("unknown architecture");
}

Layout make_layout(const ModelSpec& spec) { return make_network(spec)->layout(); }

Model::Model(ModelSpec spec) : spec_(std::move(spec)), net_(make_network(spec_)) { layout_ = net_->layout(); }

ParameterVector Model::init(std::uint64_t seed) const {
  ParameterVector p(layout_);
  net_->init(p.values(), seed);
  return p;
}

void Model::check_inputs(const ParameterVector& params, const Matrix& inputs) const {
  if (!(params.layout() == layout_)) throw DimensionMismatch("parameters do not match the model layout");
  if (static_cast<std::size_t>(inputs.cols()) != spec_.input_size()) {
    throw DimensionMismatch("input windows have " + std::to_string(inputs.cols()) + " values, model expects " +
                            std::to_string(spec_.input_size()));
  }
}

Matrix Model::predict(const ParameterVector& params, const Matrix& inputs) {
  check_inputs(params, inputs);
  Matrix out(inputs.rows(), static_cast<Eigen::Index>(spec_.n_targets));
  for (Eigen::Index start = 0; start < inputs.rows(); start += kEvalChunk) {
    const auto n = std::min(kEvalChunk, inputs.rows() - start);
    const Matrix chunk = inputs.middleRows(start, n);
    out.middleRows(start, n) = net_->forward(params.values(), chunk);
  }
  return out;
}

double Model::evaluate_mse(const ParameterVector& params, const Matrix& inputs, const Matrix& targets) {
  if (inputs.rows() == 0) return 0.0;
  return mse_loss(predict(params, inputs), targets);
}

double Model::loss_and_gradient(const ParameterVector& params, const Matrix& inputs, const Matrix& targets,
                                std::span<double> grad) {
  check_inputs(params, inputs);
  if (targets.rows() != inputs.rows() || static_cast<std::size_t>(targets.cols()) != spec_.n_targets) {
    throw DimensionMismatch("targets do not match the batch");
  }
  if (grad.size() != layout_.total_size()) throw DimensionMismatch("gradient buffer has the wrong size");
  const Matrix pred = net_->forward(params.values(), inputs);
  const Matrix diff = pred - targets;
  const double count = static_cast<double>(diff.size());
  const Matrix d_output = diff * (2.0 / count);
  // Accumulate in aligned storage so the result does not depend on where the
  // caller's buffer lives.
  grad_scratch_.assign(grad.size(), 0.0);
  net_->backward(params.values(), d_output, grad_scratch_);
  std::copy(grad_scratch_.begin(), grad_scratch_.end(), grad.begin());
  return diff.squaredNorm() / count;
}

ParameterVector init_model(const ModelSpec& spec, std::uint64_t seed) { return Model(spec).init(seed); }

Matrix forward(const ModelSpec& spec, const ParameterVector& params, const Matrix& inputs) {
  return Model(spec).predict(params, inputs);
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DimensionMismatch("mse_loss: prediction and target shapes differ");
  }
  if (pred.size() == 0) return 0.0;
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

ParameterVector backward(const ModelSpec& spec, const ParameterVector& params, const Matrix& inputs,
                         const Matrix& targets) {
  Model model(spec);
  ParameterVector grad = params.zeros_like();
  model.loss_and_gradient(params, inputs, targets, grad.values());
  return grad;
}

}  // namespace fedcast::nn
