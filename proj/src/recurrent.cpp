#include "kernels.hpp"
#include "networks.hpp"

namespace fedcast::nn::detail {

namespace {

// Gate blocks along the columns of the gate matrices:
//   LSTM (input, forget, cell, output), GRU (reset, update, new).
// The head consumes the hidden state after the last timestep.
class RecurrentNetwork final : public Network {
 public:
  explicit RecurrentNetwork(const ModelSpec& spec)
      : kind_(spec.architecture),
        window_(spec.window),
        features_(spec.n_features),
        hidden_(spec.recurrent_units),
        gates_(kind_ == Architecture::LSTM ? 4 : kind_ == Architecture::GRU ? 3 : 1) {
    layout_ = Layout(to_string(kind_));
    const std::string prefix = kind_ == Architecture::LSTM ? "lstm" : kind_ == Architecture::GRU ? "gru" : "rnn";
    wx_ = layout_.add(prefix + ".weight_input", {features_, gates_ * hidden_});
    wh_ = layout_.add(prefix + ".weight_hidden", {hidden_, gates_ * hidden_});
    b_ = layout_.add(prefix + ".bias", {gates_ * hidden_});
    head_ = Dense::append(layout_, "head", hidden_, spec.head_units);
    out_ = Dense::append(layout_, "output", spec.head_units, spec.n_targets);
  }

  void init(std::span<double> params, std::uint64_t seed) const override {
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
    const std::size_t gh = gates_ * hidden_;
    fill_uniform(params, wx_, features_ * gh, bound, rng);
    fill_uniform(params, wh_, hidden_ * gh, bound, rng);
    fill_uniform(params, b_, gh, bound, rng);
    if (kind_ == Architecture::LSTM) {
      for (std::size_t k = 0; k < hidden_; ++k) params[b_ + hidden_ + k] = 0.0;
    }
    head_.init(params, rng);
    out_.init(params, rng);
  }

  Matrix forward(std::span<const double> params, const Matrix& inputs) override {
    const auto B = inputs.rows();
    const auto H = static_cast<Eigen::Index>(hidden_);
    const auto d = static_cast<Eigen::Index>(features_);
    const std::size_t gh = gates_ * hidden_;
    const auto Wx = cmat(params, wx_, features_, gh);
    const auto Wh = cmat(params, wh_, hidden_, gh);
    const auto bias = crow(params, b_, gh);

    xs_.resize(window_);
    hs_.resize(window_ + 1);
    gate_acts_.resize(window_);
    hs_[0] = Matrix::Zero(B, H);
    if (kind_ == Architecture::LSTM) {
      cs_.resize(window_ + 1);
      tanh_cs_.resize(window_ + 1);
      cs_[0] = Matrix::Zero(B, H);
    }
    if (kind_ == Architecture::GRU) hidden_new_.resize(window_);

    Matrix z(B, static_cast<Eigen::Index>(gh));
    for (std::size_t t = 0; t < window_; ++t) {
      xs_[t] = inputs.middleCols(static_cast<Eigen::Index>(t) * d, d);
      z.noalias() = xs_[t] * Wx;
      z.rowwise() += bias;
      auto& a = gate_acts_[t];
      switch (kind_) {
        case Architecture::RNN: {
          z.noalias() += hs_[t] * Wh;
          hs_[t + 1] = z.array().tanh();
          break;
        }
        case Architecture::LSTM: {
          z.noalias() += hs_[t] * Wh;
          a.resize(B, z.cols());
          a.leftCols(2 * H) = z.leftCols(2 * H).unaryExpr([](double v) { return sigmoid(v); });
          a.middleCols(2 * H, H) = z.middleCols(2 * H, H).array().tanh();
          a.rightCols(H) = z.rightCols(H).unaryExpr([](double v) { return sigmoid(v); });
          cs_[t + 1] = a.middleCols(H, H).cwiseProduct(cs_[t]) + a.leftCols(H).cwiseProduct(a.middleCols(2 * H, H));
          tanh_cs_[t + 1] = cs_[t + 1].array().tanh();
          hs_[t + 1] = a.rightCols(H).cwiseProduct(tanh_cs_[t + 1]);
          break;
        }
        case Architecture::GRU: {
          Matrix zh = hs_[t] * Wh;
          a.resize(B, z.cols());
          a.leftCols(2 * H) =
              (z.leftCols(2 * H) + zh.leftCols(2 * H)).unaryExpr([](double v) { return sigmoid(v); });
          hidden_new_[t] = zh.rightCols(H);
          a.rightCols(H) = (z.rightCols(H) + a.leftCols(H).cwiseProduct(hidden_new_[t])).array().tanh();
          // h' = (1 - u) * n + u * h
          const auto u = a.middleCols(H, H).array();
          hs_[t + 1] = ((1.0 - u) * a.rightCols(H).array() + u * hs_[t].array()).matrix();
          break;
        }
        default: break;
      }
    }

    head_.forward(params, hs_[window_], head_pre_);
    head_act_ = head_pre_;
    relu_inplace(head_act_);
    Matrix y;
    out_.forward(params, head_act_, y);
    return y;
  }

  void backward(std::span<const double> params, const Matrix& d_output, std::span<double> grad) override {
    const auto H = static_cast<Eigen::Index>(hidden_);
    const std::size_t gh = gates_ * hidden_;
    const auto Wh = cmat(params, wh_, hidden_, gh);
    auto gWx = mat(grad, wx_, features_, gh);
    auto gWh = mat(grad, wh_, hidden_, gh);
    auto gb = row(grad, b_, gh);

    Matrix d_head;
    out_.backward(params, head_act_, d_output, grad, &d_head);
    relu_backward(head_pre_, d_head);
    Matrix dh;
    head_.backward(params, hs_[window_], d_head, grad, &dh);

    const auto B = dh.rows();
    Matrix dz(B, static_cast<Eigen::Index>(gh));
    Matrix dzh;  // GRU: gradient w.r.t. the hidden-side pre-activations
    Matrix dc;
    if (kind_ == Architecture::LSTM) dc = Matrix::Zero(B, H);

    for (std::size_t t = window_; t-- > 0;) {
      const auto& a = gate_acts_[t];
      switch (kind_) {
        case Architecture::RNN: {
          dz = dh.array() * (1.0 - hs_[t + 1].array().square());
          break;
        }
        case Architecture::LSTM: {
          const auto i = a.leftCols(H).array();
          const auto f = a.middleCols(H, H).array();
          const auto g = a.middleCols(2 * H, H).array();
          const auto o = a.rightCols(H).array();
          const auto tc = tanh_cs_[t + 1].array();
          dc.array() += dh.array() * o * (1.0 - tc.square());
          dz.leftCols(H) = (dc.array() * g * i * (1.0 - i)).matrix();
          dz.middleCols(H, H) = (dc.array() * cs_[t].array() * f * (1.0 - f)).matrix();
          dz.middleCols(2 * H, H) = (dc.array() * i * (1.0 - g.square())).matrix();
          dz.rightCols(H) = (dh.array() * tc * o * (1.0 - o)).matrix();
          dc.array() *= f;
          break;
        }
        case Architecture::GRU: {
          const auto r = a.leftCols(H).array();
          const auto u = a.middleCols(H, H).array();
          const auto n = a.rightCols(H).array();
          const Eigen::ArrayXXd dn_pre = dh.array() * (1.0 - u) * (1.0 - n.square());
          const Eigen::ArrayXXd dr_pre = dn_pre * hidden_new_[t].array() * r * (1.0 - r);
          const Eigen::ArrayXXd du_pre = dh.array() * (hs_[t].array() - n) * u * (1.0 - u);
          dz.leftCols(H) = dr_pre.matrix();
          dz.middleCols(H, H) = du_pre.matrix();
          dz.rightCols(H) = dn_pre.matrix();
          dzh = dz;
          dzh.rightCols(H) = (dn_pre * r).matrix();
          break;
        }
        default: break;
      }
      gWx.noalias() += xs_[t].transpose() * dz;
      gb += dz.colwise().sum();
      const Matrix& dz_hidden = kind_ == Architecture::GRU ? dzh : dz;
      gWh.noalias() += hs_[t].transpose() * dz_hidden;
      if (t > 0) {
        if (kind_ == Architecture::GRU) {
          Matrix direct = (dh.array() * a.middleCols(H, H).array()).matrix();
          dh.noalias() = dz_hidden * Wh.transpose();
          dh += direct;
        } else {
          dh.noalias() = dz_hidden * Wh.transpose();
        }
      }
    }
  }

 private:
  Architecture kind_;
  std::size_t window_;
  std::size_t features_;
  std::size_t hidden_;
  std::size_t gates_;
  std::size_t wx_ = 0, wh_ = 0, b_ = 0;
  Dense head_;
  Dense out_;

  std::vector<Matrix> xs_, hs_, cs_, tanh_cs_, gate_acts_, hidden_new_;
  Matrix head_pre_, head_act_;
};

}  // namespace

std::unique_ptr<Network> make_recurrent(const ModelSpec& spec) { return std::make_unique<RecurrentNetwork>(spec); }

}  // namespace fedcast::nn::detail
