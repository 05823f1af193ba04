#include "rmn/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "rmn/checkpoint.hpp"
#include "rmn/eval.hpp"
#include "rmn/nn_ops.hpp"

namespace rmn {

void TrainConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw ConfigError("training config: " + field + " " + why);
  };
  if (max_epochs < 1) bad("max_epochs", "must be at least 1");
  if (batch_size < 1) bad("batch_size", "must be at least 1");
  if (!(lr >= 0) || !std::isfinite(lr)) bad("lr", "must be a non-negative number");
  if (!(momentum >= 0 && momentum < 1)) bad("momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) bad("weight_decay", "must be non-negative");
  if (plateau_patience < 1) bad("plateau_patience", "must be at least 1");
  if (!(plateau_factor > 0 && plateau_factor < 1)) bad("plateau_factor", "must lie in (0, 1)");
  if (early_stop_patience < 1) bad("early_stop_patience", "must be at least 1");
}

// ------------------------------------------------------------ optimizer

template <Scalar T>
SgdOptimizer<T>::SgdOptimizer(std::vector<Tensor<T>> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) {
    if (!p.is_leaf()) throw ContractError("optimizer: parameters must be leaves");
    velocity_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
  }
}

template <Scalar T>
void SgdOptimizer<T>::step(const GradMap<T>& grads) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!grads.contains(params_[i]))
      throw ContractError("optimizer: no gradient for parameter " + std::to_string(i) + " " +
                          to_string(params_[i].shape()));
  }
  const T lr = static_cast<T>(lr_), mom = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    const auto g = grads[params_[i]].data();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T gj = g[j] + wd * w[j];
      v[j] = mom * v[j] + gj;
      w[j] -= lr * v[j];
    }
  }
}

template class SgdOptimizer<float>;
template class SgdOptimizer<double>;

// -------------------------------------------------------- schedule/stop

PlateauScheduler::PlateauScheduler(double lr, int patience, double factor)
    : lr_(lr), patience_(patience), factor_(factor) {}

double PlateauScheduler::step(double val_accuracy) {
  if (val_accuracy > best_) {
    best_ = val_accuracy;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ >= patience_) {
    lr_ *= factor_;
    ++reductions_;
    bad_epochs_ = 0;
  }
  return lr_;
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {}

bool EarlyStopping::step(double val_accuracy) {
  if (val_accuracy > best_) {
    best_ = val_accuracy;
    bad_epochs_ = 0;
    return false;
  }
  return ++bad_epochs_ >= patience_;
}

// ---------------------------------------------------------------- fit

template <Scalar T>
double train_step(Network<T>& net, SgdOptimizer<T>& opt, const Tensor<T>& images, std::span<const int> labels) {
  Tape<T> tape;
  const Tensor<T> loss = cross_entropy(net.forward(images, Mode::train), labels);
  const GradMap<T> grads = tape.backward(loss);
  opt.step(grads);
  return static_cast<double>(loss.item());
}

template <Scalar T>
TrainReport fit(Network<T>& net, const Dataset& ds, const TrainConfig& cfg, const FitOptions& options) {
  cfg.validate();
  if (ds.indices(Split::train).empty()) throw ConfigError("fit: the dataset has no train samples");
  if (ds.indices(Split::val).empty()) throw ConfigError("fit: the dataset has no val samples");
  if (options.out_dir.empty()) throw ConfigError("fit: no output directory");
  std::filesystem::create_directories(options.out_dir);

  TrainReport report;
  report.checkpoint = options.out_dir / "best.rmsk";
  SgdOptimizer<T> opt(net.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay);
  PlateauScheduler plateau(cfg.lr, cfg.plateau_patience, cfg.plateau_factor);
  EarlyStopping stopper(cfg.early_stop_patience);
  const std::int64_t min_side = shape_chain(net.spec()).min_normalized_side;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = opt.lr();

    BatchOptions bo;
    bo.batch_size = cfg.batch_size;
    bo.shuffle = true;
    bo.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
    bo.augment = cfg.augment;
    bo.image_side = net.spec().input_size;
    auto it = batch_iter<T>(ds, Split::train, bo);
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    int batch_index = 0;
    while (auto batch = it.next()) {
      ++batch_index;
      const auto n = static_cast<std::int64_t>(batch->labels.size());
      if (n * min_side * min_side < 2) {
        ++log.skipped_batches;
        continue;
      }
      double loss = 0.0;
      try {
        loss = train_step(net, opt, batch->images, batch->labels);
      } catch (const NumericError& e) {
        throw NumericError("non-finite value in epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      if (!std::isfinite(loss)) {
        throw NumericError("loss is not finite in epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      loss_sum += loss * static_cast<double>(n);
      seen += n;
    }
    if (seen == 0) throw ConfigError("fit: every training batch was skipped; use a batch size of at least 2");
    log.train_loss = loss_sum / static_cast<double>(seen);

    const SplitPredictions val = predict_split(net, ds, Split::val, cfg.batch_size);
    log.val_acc = accuracy(val.preds, val.labels);
    if (log.val_acc > report.best_val_acc) {
      report.best_val_acc = log.val_acc;
      report.best_epoch = epoch;
      save_checkpoint(net, report.checkpoint);
    }
    report.epochs.push_back(log);
    if (options.on_epoch) options.on_epoch(log);

    opt.set_lr(plateau.step(log.val_acc));
    if (stopper.step(log.val_acc)) {
      report.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }

  load_state(net, report.checkpoint);
  const SplitPredictions train = predict_split(net, ds, Split::train, cfg.batch_size);
  report.train_acc = accuracy(train.preds, train.labels);
  write_train_log(report, options.out_dir / "train_log.csv");
  return report;
}

template TrainReport fit(Network<float>&, const Dataset&, const TrainConfig&, const FitOptions&);
template TrainReport fit(Network<double>&, const Dataset&, const TrainConfig&, const FitOptions&);
template double train_step(Network<float>&, SgdOptimizer<float>&, const Tensor<float>&, std::span<const int>);
template double train_step(Network<double>&, SgdOptimizer<double>&, const Tensor<double>&, std::span<const int>);

void write_train_log(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write training log '" + path.string() + "'");
  out << "epoch,train_loss,val_acc,lr\n" << std::setprecision(17);
  for (const auto& e : report.epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_acc << ',' << e.lr << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string summary_json(const TrainReport& report, const TrainConfig& cfg, const std::string& architecture) {
  nlohmann::ordered_json j;
  j["config"] = {{"architecture", architecture},
                 {"epochs", cfg.max_epochs},
                 {"batch", cfg.batch_size},
                 {"lr", cfg.lr},
                 {"momentum", cfg.momentum},
                 {"weight_decay", cfg.weight_decay},
                 {"plateau_patience", cfg.plateau_patience},
                 {"plateau_factor", cfg.plateau_factor},
                 {"early_stop_patience", cfg.early_stop_patience},
                 {"seed", cfg.seed},
                 {"augment", cfg.augment}};
  auto epochs = nlohmann::ordered_json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_acc", e.val_acc},
                      {"lr", e.lr},
                      {"skipped_batches", e.skipped_batches}});
  }
  j["epochs"] = epochs;
  j["best_epoch"] = report.best_epoch;
  j["best_val_acc"] = report.best_val_acc;
  j["checkpoint"] = report.checkpoint.string();
  j["train_acc"] = report.train_acc;
  j["stopped_early"] = report.stopped_early;
  return j.dump(2);
}

}  // namespace rmn
