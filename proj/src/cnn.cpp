#include "kernels.hpp"
#include "networks.hpp"

namespace fedcast::nn::detail {

namespace {

// Input windows are viewed as one-channel T x d images. Activations are stored
// pixel-major: row (b * T*d + y*d + x), one column per channel. Convolutions are
// stride 1 with same padding; weights are (out, in, k, k) row-major.
class CnnNetwork final : public Network {
 public:
  explicit CnnNetwork(const ModelSpec& spec)
      : height_(spec.window), width_(spec.n_features), kernel_(spec.kernel) {
    layout_ = Layout(to_string(spec.architecture));
    std::size_t in = 1;
    for (std::size_t l = 0; l < spec.conv_filters.size(); ++l) {
      Conv c;
      c.in = in;
      c.out = spec.conv_filters[l];
      const auto name = "conv" + std::to_string(l);
      c.w = layout_.add(name + ".weight", {c.out, c.in, kernel_, kernel_});
      c.b = layout_.add(name + ".bias", {c.out});
      convs_.push_back(c);
      in = c.out;
    }
    head_ = Dense::append(layout_, "head", in, spec.head_units);
    out_ = Dense::append(layout_, "output", spec.head_units, spec.n_targets);
  }

  void init(std::span<double> params, std::uint64_t seed) const override {
    Rng rng(seed);
    for (const auto& c : convs_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(c.in * kernel_ * kernel_));
      fill_uniform(params, c.w, c.out * c.in * kernel_ * kernel_, bound, rng);
      fill_uniform(params, c.b, c.out, bound, rng);
    }
    head_.init(params, rng);
    out_.init(params, rng);
  }

  Matrix forward(std::span<const double> params, const Matrix& inputs) override {
    batch_ = static_cast<std::size_t>(inputs.rows());
    const auto pixels = static_cast<Eigen::Index>(height_ * width_);
    const auto rows = static_cast<Eigen::Index>(batch_) * pixels;
    cols_.resize(convs_.size());
    pre_.resize(convs_.size());

    Matrix act = Eigen::Map<const Matrix>(inputs.data(), rows, 1);
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      const auto& c = convs_[l];
      im2col(act, c.in, cols_[l]);
      pre_[l].noalias() = cols_[l] * weights(params, c).transpose();
      pre_[l].rowwise() += crow(params, c.b, c.out);
      act = pre_[l].cwiseMax(0.0);
    }

    const auto channels = act.cols();
    pooled_.resize(static_cast<Eigen::Index>(batch_), channels);
    for (std::size_t b = 0; b < batch_; ++b) {
      pooled_.row(static_cast<Eigen::Index>(b)) =
          act.middleRows(static_cast<Eigen::Index>(b) * pixels, pixels).colwise().mean();
    }
    head_.forward(params, pooled_, head_pre_);
    head_act_ = head_pre_;
    relu_inplace(head_act_);
    Matrix y;
    out_.forward(params, head_act_, y);
    return y;
  }

  void backward(std::span<const double> params, const Matrix& d_output, std::span<double> grad) override {
    const auto pixels = static_cast<Eigen::Index>(height_ * width_);
    Matrix d_head;
    out_.backward(params, head_act_, d_output, grad, &d_head);
    relu_backward(head_pre_, d_head);
    Matrix d_pooled;
    head_.backward(params, pooled_, d_head, grad, &d_pooled);

    Matrix d_act(static_cast<Eigen::Index>(batch_) * pixels, d_pooled.cols());
    const double inv = 1.0 / static_cast<double>(pixels);
    for (std::size_t b = 0; b < batch_; ++b) {
      d_act.middleRows(static_cast<Eigen::Index>(b) * pixels, pixels).rowwise() =
          d_pooled.row(static_cast<Eigen::Index>(b)) * inv;
    }

    Matrix d_col;
    for (std::size_t l = convs_.size(); l-- > 0;) {
      const auto& c = convs_[l];
      relu_backward(pre_[l], d_act);
      mat(grad, c.w, c.out, c.in * kernel_ * kernel_).noalias() += d_act.transpose() * cols_[l];
      row(grad, c.b, c.out) += d_act.colwise().sum();
      if (l > 0) {
        d_col.noalias() = d_act * weights(params, c);
        col2im(d_col, c.in, d_act);
      }
    }
  }

 private:
  struct Conv {
    std::size_t in = 0, out = 0, w = 0, b = 0;
  };

  ConstMatMap weights(std::span<const double> params, const Conv& c) const {
    return cmat(params, c.w, c.out, c.in * kernel_ * kernel_);
  }

  void im2col(const Matrix& act, std::size_t channels, Matrix& col) const {
    const auto H = static_cast<long>(height_), W = static_cast<long>(width_), K = static_cast<long>(kernel_);
    const long pad = K / 2;
    const auto pixels = H * W;
    col.setZero(static_cast<Eigen::Index>(batch_) * pixels, static_cast<Eigen::Index>(channels * kernel_ * kernel_));
    for (long b = 0; b < static_cast<long>(batch_); ++b) {
      for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
          const auto r = b * pixels + y * W + x;
          for (long ky = 0; ky < K; ++ky) {
            const long sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            for (long kx = 0; kx < K; ++kx) {
              const long sx = x + kx - pad;
              if (sx < 0 || sx >= W) continue;
              const auto src = b * pixels + sy * W + sx;
              for (long c = 0; c < static_cast<long>(channels); ++c) {
                col(r, (c * K + ky) * K + kx) = act(src, c);
              }
            }
          }
        }
      }
    }
  }

  void col2im(const Matrix& col, std::size_t channels, Matrix& act) const {
    const auto H = static_cast<long>(height_), W = static_cast<long>(width_), K = static_cast<long>(kernel_);
    const long pad = K / 2;
    const auto pixels = H * W;
    act.setZero(static_cast<Eigen::Index>(batch_) * pixels, static_cast<Eigen::Index>(channels));
    for (long b = 0; b < static_cast<long>(batch_); ++b) {
      for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
          const auto r = b * pixels + y * W + x;
          for (long ky = 0; ky < K; ++ky) {
            const long sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            for (long kx = 0; kx < K; ++kx) {
              const long sx = x + kx - pad;
              if (sx < 0 || sx >= W) continue;
              const auto dst = b * pixels + sy * W + sx;
              for (long c = 0; c < static_cast<long>(channels); ++c) {
                act(dst, c) += col(r, (c * K + ky) * K + kx);
              }
            }
          }
        }
      }
    }
  }

  std::size_t height_, width_, kernel_;
  std::vector<Conv> convs_;
  Dense head_;
  Dense out_;

  std::size_t batch_ = 0;
  std::vector<Matrix> cols_, pre_;
  Matrix pooled_, head_pre_, head_act_;
};

}  // namespace

std::unique_ptr<Network> make_cnn(const ModelSpec& spec) { return std::make_unique<CnnNetwork>(spec); }

}  // namespace fedcast::nn::detail
