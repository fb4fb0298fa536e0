#pragma once

#include "fedcast/dataio.hpp"
#include "fedcast/model.hpp"
#include "fedcast/optim.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace fedcast::nn {

using data::WindowedDataset;

/// FedProx regularizer mu/2 * ||w - anchor||^2 added to the local loss.
struct Proximal {
  double mu = 0.0;
  ParameterVector anchor;
};

struct TrainReport {
  std::vector<double> train_loss;       // per epoch, data MSE only
  std::vector<double> validation_loss;  // per epoch; empty without validation windows
  std::size_t epochs_run = 0;
  std::size_t local_steps = 0;  // optimizer steps taken
  std::size_t best_epoch = 0;   // 1-based; 0 means the starting parameters
  ParameterVector params;
};

/// Number of optimizer steps in one pass; the last partial batch counts.
constexpr std::size_t steps_per_epoch(std::size_t n_windows, std::size_t batch_size) {
  return (n_windows + batch_size - 1) / batch_size;
}

/// Patience-based stopping on a monitored loss (strict improvement only).
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  /// Records the loss of `epoch` (1-based); returns true if it is a new best.
  bool observe(std::size_t epoch, double loss);
  bool should_stop() const { return last_epoch_ - best_epoch_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  std::size_t last_epoch_ = 0;
  double best_loss_;
};

struct EarlyStoppingOutcome {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
};

/// Drives `run_epoch(epoch) -> monitored loss` until max_epochs or patience
/// runs out; `on_best(epoch)` fires whenever an epoch becomes the new best.
EarlyStoppingOutcome run_with_early_stopping(std::size_t max_epochs, std::size_t patience,
                                             const std::function<double(std::size_t)>& run_epoch,
                                             const std::function<void(std::size_t)>& on_best);

using EpochObserver = std::function<void(std::size_t epoch, const ParameterVector& params, double val_loss)>;

/// Mini-batch Adam trainer for one client. The optimizer state and the epoch
/// counter that seeds each epoch's shuffle persist across calls, so training
/// in several calls follows the same trajectory as one long call.
class LocalTrainer {
 public:
  LocalTrainer(ModelSpec spec, std::uint64_t seed);
  /// Shares `model` (its activation workspace) with other trainers that run
  /// on the same thread.
  LocalTrainer(std::shared_ptr<Model> model, std::uint64_t seed);

  const ModelSpec& spec() const { return model_->spec(); }
  Model& model() { return *model_; }
  std::size_t epochs_done() const { return epochs_done_; }
  const OptimizerState& optimizer() const { return optimizer_; }
  void reset_optimizer();

  TrainReport train(ParameterVector params, const WindowedDataset& windows, const WindowedDataset& validation,
                    std::size_t epochs, const std::optional<Proximal>& proximal = std::nullopt,
                    const EpochObserver& observer = {});

  /// Keeps the parameters of the epoch with the lowest validation MSE
  /// (training MSE when there are no validation windows).
  TrainReport train_with_early_stopping(ParameterVector params, const WindowedDataset& windows,
                                        const WindowedDataset& validation, std::size_t max_epochs,
                                        std::size_t patience, const EpochObserver& observer = {});

 private:
  double run_epoch(ParameterVector& params, const WindowedDataset& windows, const Proximal* proximal);

  std::shared_ptr<Model> model_;
  OptimizerState optimizer_;
  std::uint64_t seed_;
  std::size_t epochs_done_ = 0;
  AlignedBuffer grad_;
  Matrix batch_inputs_, batch_targets_;
};

TrainReport train_local(const ModelSpec& spec, ParameterVector params, const WindowedDataset& windows,
                        const WindowedDataset& validation, std::size_t epochs,
                        const std::optional<Proximal>& proximal = std::nullopt, std::uint64_t seed = 0);

TrainReport train_with_early_stopping(const ModelSpec& spec, ParameterVector params, const WindowedDataset& windows,
                                      const WindowedDataset& validation, std::size_t max_epochs,
                                      std::size_t patience, std::uint64_t seed = 0);

}  // namespace fedcast::nn
