#include "kernels.hpp"
#include "networks.hpp"

namespace fedcast::nn::detail {

namespace {

class MlpNetwork final : public Network {
 public:
  explicit MlpNetwork(const ModelSpec& spec) {
    layout_ = Layout(to_string(spec.architecture));
    std::size_t in = spec.input_size();
    for (std::size_t l = 0; l < spec.mlp_hidden.size(); ++l) {
      layers_.push_back(Dense::append(layout_, "dense" + std::to_string(l), in, spec.mlp_hidden[l]));
      in = spec.mlp_hidden[l];
    }
    layers_.push_back(Dense::append(layout_, "output", in, spec.n_targets));
  }

  void init(std::span<double> params, std::uint64_t seed) const override {
    Rng rng(seed);
    for (const auto& layer : layers_) layer.init(params, rng);
  }

  Matrix forward(std::span<const double> params, const Matrix& inputs) override {
    // acts_[l] is the input to layer l; pre_[l] its pre-activation output.
    acts_.resize(layers_.size());
    pre_.resize(layers_.size());
    acts_[0] = inputs;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].forward(params, acts_[l], pre_[l]);
      if (l + 1 < layers_.size()) {
        acts_[l + 1] = pre_[l];
        relu_inplace(acts_[l + 1]);
      }
    }
    return pre_.back();
  }

  void backward(std::span<const double> params, const Matrix& d_output, std::span<double> grad) override {
    Matrix delta = d_output;
    Matrix d_input;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      layers_[l].backward(params, acts_[l], delta, grad, l > 0 ? &d_input : nullptr);
      if (l > 0) {
        relu_backward(pre_[l - 1], d_input);
        delta.swap(d_input);
      }
    }
  }

 private:
  std::vector<Dense> layers_;
  std::vector<Matrix> acts_;
  std::vector<Matrix> pre_;
};

}  // namespace

std::unique_ptr<Network> make_mlp(const ModelSpec& spec) { return std::make_unique<MlpNetwork>(spec); }

}  // namespace fedcast::nn::detail
