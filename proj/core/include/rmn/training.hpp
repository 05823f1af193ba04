#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rmn/data.hpp"
#include "rmn/network.hpp"
#include "rmn/tape.hpp"

namespace rmn {

struct TrainConfig {
  int max_epochs = 50;
  int batch_size = 48;
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  int plateau_patience = 2;
  double plateau_factor = 0.1;
  int early_stop_patience = 8;
  std::uint64_t seed = 0;
  bool augment = true;

  // ConfigError naming the first offending field.
  void validate() const;
};

/// SGD with momentum and L2 weight decay applied to every parameter:
///   g' = g + wd * w;  v = momentum * v + g';  w -= lr * v
template <Scalar T>
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor<T>> params, double lr, double momentum, double weight_decay);

  // ContractError if any parameter has no gradient in `grads`.
  void step(const GradMap<T>& grads);

  double lr() const noexcept { return lr_; }
  void set_lr(double lr) noexcept { lr_ = lr; }
  const std::vector<std::vector<T>>& velocity() const noexcept { return velocity_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double lr_, momentum_, weight_decay_;
};

/// Multiplies the rate by `factor` once `patience` consecutive epochs pass
/// without a strict improvement of the best validation accuracy. The
/// counter restarts after a reduction or an improvement.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, int patience, double factor);

  // Feed one epoch's validation accuracy; returns the rate for the next epoch.
  double step(double val_accuracy);
  double lr() const noexcept { return lr_; }
  int reductions() const noexcept { return reductions_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double best_ = -1.0;
  int bad_epochs_ = 0;
  int reductions_ = 0;
};

// True once `patience` consecutive epochs fail to strictly beat the best accuracy.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  bool step(double val_accuracy);
  int bad_epochs() const noexcept { return bad_epochs_; }

 private:
  int patience_;
  double best_ = -1.0;
  int bad_epochs_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;  // rate used during this epoch
  std::int64_t skipped_batches = 0;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_val_acc = -1.0;
  std::filesystem::path checkpoint;
  bool stopped_early = false;
  // Eval-mode accuracy of the best checkpoint on the training split.
  double train_acc = 0.0;
};

struct FitOptions {
  std::filesystem::path out_dir;  // best.rmsk and train_log.csv are written here
  std::function<void(const EpochLog&)> on_epoch;
};

/// Runs the training recipe: one pass over the shuffled (and optionally
/// augmented) train split per epoch, eval-mode validation, plateau lr
/// reduction, early stopping and best-checkpoint retention. On return the
/// network holds the best checkpoint's values.
///
/// A train-mode batch that cannot be normalized (a single sample reaching a
/// 1x1 feature map) is skipped and counted. A non-finite loss aborts with
/// NumericError naming the epoch and batch.
template <Scalar T>
TrainReport fit(Network<T>& net, const Dataset& ds, const TrainConfig& cfg, const FitOptions& options);

// Single optimization step on one batch; returns the loss.
template <Scalar T>
double train_step(Network<T>& net, SgdOptimizer<T>& opt, const Tensor<T>& images, std::span<const int> labels);

void write_train_log(const TrainReport& report, const std::filesystem::path& path);

// {config, epochs: [...], best_epoch, best_val_acc, checkpoint, train_acc, stopped_early}
std::string summary_json(const TrainReport& report, const TrainConfig& cfg, const std::string& architecture);

extern template class SgdOptimizer<float>;
extern template class SgdOptimizer<double>;
extern template TrainReport fit(Network<float>&, const Dataset&, const TrainConfig&, const FitOptions&);
extern template TrainReport fit(Network<double>&, const Dataset&, const TrainConfig&, const FitOptions&);
extern template double train_step(Network<float>&, SgdOptimizer<float>&, const Tensor<float>&, std::span<const int>);
extern template double train_step(Network<double>&, SgdOptimizer<double>&, const Tensor<double>&, std::span<const int>);

}  // namespace rmn
