#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "emotrack/config.hpp"
#include "emotrack/data.hpp"
#include "emotrack/model.hpp"

namespace emotrack::training {

using num::Gradients;
using num::ParamStore;
using num::Var;

/// Huber(sum y_hat, sum y) + lambda / J * sum_j Huber(y_hat_j, y_j).
/// Throws DataError when `labels` is empty.
Var compute_loss(const model::Prediction& pred, const std::optional<data::Items>& labels, double lambda_sym,
                 double delta);

/// Same objective on plain values.
double loss_value(const std::vector<double>& items, const data::Items& labels, double lambda_sym, double delta);

/// ceil(ratio * total) warmup steps rising linearly to `base_lr`, then cosine decay to 0.
double lr_at(std::size_t step, std::size_t total_steps, double warmup_ratio, double base_lr);
std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio);

struct OptimizerState {
  Gradients m;
  Gradients v;
  std::size_t step = 0;

  static OptimizerState for_params(const ParamStore& params);
};

/// Decoupled weight decay p *= (1 - lr wd) followed by the bias-corrected Adam
/// update. Parameters whose name starts with an entry of cfg.decay_exclude are
/// not decayed. Throws NumericError naming the first non-finite gradient.
void adamw_step(ParamStore& params, const Gradients& grads, OptimizerState& state, const TrainConfig& cfg, double lr);

/// Patience counter on a loss that should go down. An epoch improves when its
/// loss is strictly below the best so far.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Records an epoch; returns true when it is the new best.
  bool update(std::size_t epoch, double loss);
  bool should_stop() const { return bad_epochs_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t bad_epochs_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;  ///< learning rate of the epoch's last step
  double seconds = 0.0;
};

nlohmann::json to_json(const EpochLog& e);

struct TrainHooks {
  /// Called after every epoch, in order.
  std::function<void(const EpochLog&)> on_epoch;
  /// Replaces the measured validation loss before early stopping sees it (tests).
  std::function<double(std::size_t epoch, double measured)> val_loss_override;
};

struct TrainResult {
  ParamStore best_params;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
  std::vector<EpochLog> log;
};

/// Mean objective and mean total-score absolute error against the labels, eval mode.
struct Evaluation {
  double loss = 0.0;
  double total_mae = 0.0;
};
Evaluation evaluate_labels(const ParamStore& params, const TrainConfig& cfg, const std::vector<data::Example>& examples);

/// Mini-batch training with per-epoch seeded shuffling, clipping, AdamW, the
/// warmup-cosine schedule and early stopping on validation loss. Every draw
/// comes from streams of Rng(cfg.seed), so a (data, config) pair fixes the run.
TrainResult train(const std::vector<data::Example>& train_set, const std::vector<data::Example>& val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Same, starting from the given parameters instead of a fresh initialization.
TrainResult train_from(ParamStore params, const std::vector<data::Example>& train_set,
                       const std::vector<data::Example>& val_set, const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace emotrack::training
