#include "fedcast/train.hpp"

#include "fedcast/aggregation.hpp"
#include "fedcast/rng.hpp"

#include <limits>

namespace fedcast::nn {

EarlyStopping::EarlyStopping(std::size_t patience)
    : patience_(patience), best_loss_(std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw InvalidArgument("early-stopping patience must be at least 1");
}

bool EarlyStopping::observe(std::size_t epoch, double loss) {
  last_epoch_ = epoch;
  if (loss < best_loss_) {
    best_loss_ = loss;
    best_epoch_ = epoch;
    return true;
  }
  return false;
}

EarlyStoppingOutcome run_with_early_stopping(std::size_t max_epochs, std::size_t patience,
                                             const std::function<double(std::size_t)>& run_epoch,
                                             const std::function<void(std::size_t)>& on_best) {
  if (max_epochs == 0) throw InvalidArgument("max_epochs must be at least 1");
  EarlyStopping stopper(patience);
  EarlyStoppingOutcome outcome;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    const double loss = run_epoch(epoch);
    outcome.epochs_run = epoch;
    if (stopper.observe(epoch, loss) && on_best) on_best(epoch);
    if (stopper.should_stop()) break;
  }
  outcome.best_epoch = stopper.best_epoch();
  outcome.best_loss = stopper.best_loss();
  return outcome;
}

LocalTrainer::LocalTrainer(ModelSpec spec, std::uint64_t seed)
    : LocalTrainer(std::make_shared<Model>(std::move(spec)), seed) {}

LocalTrainer::LocalTrainer(std::shared_ptr<Model> model, std::uint64_t seed)
    : model_(std::move(model)), optimizer_(OptimizerState::fresh(model_->layout())), seed_(seed) {}

void LocalTrainer::reset_optimizer() { optimizer_ = OptimizerState::fresh(model_->layout()); }

double LocalTrainer::run_epoch(ParameterVector& params, const WindowedDataset& windows, const Proximal* proximal) {
  const std::size_t n = windows.size();
  Rng rng(mix_seed(seed_, epochs_done_));
  ++epochs_done_;
  if (n == 0) return 0.0;
  const auto order = rng.permutation(n);
  const std::size_t batch = spec().batch_size;
  grad_.resize(params.size());
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t count = std::min(batch, n - start);
    batch_inputs_.resize(static_cast<Eigen::Index>(count), windows.inputs.cols());
    batch_targets_.resize(static_cast<Eigen::Index>(count), windows.targets.cols());
    for (std::size_t k = 0; k < count; ++k) {
      const auto src = static_cast<Eigen::Index>(order[start + k]);
      batch_inputs_.row(static_cast<Eigen::Index>(k)) = windows.inputs.row(src);
      batch_targets_.row(static_cast<Eigen::Index>(k)) = windows.targets.row(src);
    }
    const double loss = model_->loss_and_gradient(params, batch_inputs_, batch_targets_, grad_);
    if (proximal != nullptr && proximal->mu != 0.0) {
      agg::add_proximal_gradient(grad_, params, proximal->anchor, proximal->mu);
    }
    adam_step(optimizer_, params, grad_, spec().learning_rate);
    loss_sum += loss * static_cast<double>(count);
  }
  return loss_sum / static_cast<double>(n);
}

TrainReport LocalTrainer::train(ParameterVector params, const WindowedDataset& windows,
                                const WindowedDataset& validation, std::size_t epochs,
                                const std::optional<Proximal>& proximal, const EpochObserver& observer) {
  if (proximal) require_same_layout(params, proximal->anchor, "proximal anchor");
  TrainReport report;
  for (std::size_t e = 1; e <= epochs; ++e) {
    report.train_loss.push_back(run_epoch(params, windows, proximal ? &*proximal : nullptr));
    double val = std::numeric_limits<double>::quiet_NaN();
    if (!validation.empty()) {
      val = model_->evaluate_mse(params, validation.inputs, validation.targets);
      report.validation_loss.push_back(val);
    }
    if (observer) observer(e, params, val);
  }
  report.epochs_run = epochs;
  report.local_steps = epochs * steps_per_epoch(windows.size(), spec().batch_size);
  report.best_epoch = epochs;
  report.params = std::move(params);
  return report;
}

TrainReport LocalTrainer::train_with_early_stopping(ParameterVector params, const WindowedDataset& windows,
                                                    const WindowedDataset& validation, std::size_t max_epochs,
                                                    std::size_t patience, const EpochObserver& observer) {
  TrainReport report;
  ParameterVector best = params;
  const auto outcome = run_with_early_stopping(
      max_epochs, patience,
      [&](std::size_t epoch) {
        const double train_loss = run_epoch(params, windows, nullptr);
        report.train_loss.push_back(train_loss);
        double monitored = train_loss;
        if (!validation.empty()) {
          monitored = model_->evaluate_mse(params, validation.inputs, validation.targets);
          report.validation_loss.push_back(monitored);
        }
        if (observer) observer(epoch, params, monitored);
        return monitored;
      },
      [&](std::size_t) { best = params; });
  report.epochs_run = outcome.epochs_run;
  report.local_steps = outcome.epochs_run * steps_per_epoch(windows.size(), spec().batch_size);
  report.best_epoch = outcome.best_epoch;
  report.params = std::move(best);
  return report;
}

TrainReport train_local(const ModelSpec& spec, ParameterVector params, const WindowedDataset& windows,
                        const WindowedDataset& validation, std::size_t epochs,
                        const std::optional<Proximal>& proximal, std::uint64_t seed) {
  LocalTrainer trainer(spec, seed);
  return trainer.train(std::move(params), windows, validation, epochs, proximal);
}

TrainReport train_with_early_stopping(const ModelSpec& spec, ParameterVector params, const WindowedDataset& windows,
                                      const WindowedDataset& validation, std::size_t max_epochs,
                                      std::size_t patience, std::uint64_t seed) {
  LocalTrainer trainer(spec, seed);
  return trainer.train_with_early_stopping(std::move(params), windows, validation, max_epochs, patience);
}

}  // namespace fedcast::nn
