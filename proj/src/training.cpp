#include "emotrack/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "emotrack/errors.hpp"
#include "emotrack/functional.hpp"

namespace emotrack::training {

Var compute_loss(const model::Prediction& pred, const std::optional<data::Items>& labels, double lambda_sym,
                 double delta) {
  if (!labels) throw DataError("training objective needs labels");
  const auto& y = *labels;
  const std::size_t j = y.size();
  if (pred.items.value().size() != j) throw std::invalid_argument("prediction and label widths differ");
  num::Tensor item_targets({j});
  std::copy(y.begin(), y.end(), item_targets.values().begin());
  num::Tensor total_target({1}, std::accumulate(y.begin(), y.end(), 0.0));
  Var aggregate = num::huber(pred.total, total_target, delta);
  if (lambda_sym == 0.0) return aggregate;
  Var symptoms = num::sum(num::huber(pred.items, item_targets, delta));
  return num::add(aggregate, num::scale(symptoms, lambda_sym / static_cast<double>(j)));
}

double loss_value(const std::vector<double>& items, const data::Items& labels, double lambda_sym, double delta) {
  double pred_total = 0.0, label_total = 0.0, symptom = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    pred_total += items[j];
    label_total += labels[j];
    symptom += num::huber(items[j], labels[j], delta);
  }
  return num::huber(pred_total, label_total, delta) + lambda_sym * symptom / static_cast<double>(labels.size());
}

std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio) {
  // The epsilon keeps products like 0.05 * 1000 from rounding up to 51.
  return static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-9));
}

double lr_at(std::size_t step, std::size_t total_steps, double warmup_ratio, double base_lr) {
  if (total_steps == 0) throw std::invalid_argument("learning-rate schedule needs at least one step");
  const std::size_t warm = warmup_steps(total_steps, warmup_ratio);
  if (step < warm) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (total_steps <= warm) return base_lr;
  const double progress =
      std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(total_steps - warm));
  return 0.5 * base_lr * (1.0 + std::cos(M_PI * progress));
}

OptimizerState OptimizerState::for_params(const ParamStore& params) {
  return OptimizerState{params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ParamStore& params, const Gradients& grads, OptimizerState& state, const TrainConfig& cfg, double lr) {
  for (const auto& [name, g] : grads) {
    for (double x : g.values()) {
      if (!std::isfinite(x)) {
        throw NumericError("non-finite gradient for parameter '" + name + "' at optimizer step " +
                           std::to_string(state.step + 1));
      }
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name);
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    bool decay = true;
    for (const auto& prefix : cfg.decay_exclude) {
      if (name.rfind(prefix, 0) == 0) decay = false;
    }
    const double shrink = decay ? 1.0 - lr * cfg.weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] *= shrink;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
}

bool EarlyStopper::update(std::size_t epoch, double loss) {
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = epoch;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

nlohmann::json to_json(const EpochLog& e) {
  return nlohmann::json{{"epoch", e.epoch},     {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                        {"val_mae", e.val_mae}, {"lr", e.lr},                 {"seconds", e.seconds}};
}

Evaluation evaluate_labels(const ParamStore& params, const TrainConfig& cfg, const std::vector<data::Example>& examples) {
  if (examples.empty()) throw DataError("evaluation split is empty");
  Evaluation ev;
  for (const auto& ex : examples) {
    if (!ex.label_items) {
      throw DataError("session " + std::to_string(ex.session_index) + " of '" + ex.run_id + "' has no labels");
    }
    auto p = model::predict(params, cfg.model, model::input_from(ex));
    ev.loss += loss_value(p.items, *ex.label_items, cfg.lambda_sym, cfg.huber_delta);
    ev.total_mae += std::abs(p.total - data::total_score(*ex.label_items));
  }
  const double n = static_cast<double>(examples.size());
  ev.loss /= n;
  ev.total_mae /= n;
  if (!std::isfinite(ev.loss)) throw NumericError("validation loss is not finite");
  return ev;
}

TrainResult train(const std::vector<data::Example>& train_set, const std::vector<data::Example>& val_set,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  return train_from(model::init_params(cfg.model, cfg.seed), train_set, val_set, cfg, hooks);
}

TrainResult train_from(ParamStore params, const std::vector<data::Example>& train_set,
                       const std::vector<data::Example>& val_set, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training split is empty");
  if (val_set.empty()) throw DataError("validation split is empty");
  for (const auto& ex : train_set) {
    if (!ex.label_items) {
      throw DataError("training session " + std::to_string(ex.session_index) + " of '" + ex.run_id + "' has no labels");
    }
  }

  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.max_epochs * batches;
  const Rng root(cfg.seed);
  const Rng shuffle_root = root.split("shuffle");
  const Rng forward_root = root.split("forward");

  OptimizerState opt = OptimizerState::for_params(params);
  EarlyStopper stopper(cfg.patience);
  TrainResult result;
  result.best_params = params;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffler = shuffle_root.split(epoch);
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - begin);
      Gradients grads = params.zeros_like();
      const Rng step_root = forward_root.split(step);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& ex = train_set[order[i]];
        num::Tape tape;
        model::ForwardOptions fo;
        fo.train = true;
        fo.p_hist = cfg.p_hist;
        fo.stream = step_root.split(i - begin);
        auto out = model::forward(tape, params, cfg.model, model::input_from(ex), fo);
        Var loss = compute_loss(out.prediction, ex.label_items, cfg.lambda_sym, cfg.huber_delta);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) {
          throw NumericError("non-finite training loss in epoch " + std::to_string(epoch) + " for session " +
                             std::to_string(ex.session_index) + " of '" + ex.run_id + "'");
        }
        loss_sum += lv;
        tape.backward(num::scale(loss, inv));
        tape.accumulate_gradients(grads);
      }
      num::clip_global_norm(grads, cfg.clip_norm);
      lr = lr_at(step, total_steps, cfg.warmup_ratio, cfg.lr);
      adamw_step(params, grads, opt, cfg, lr);
      ++step;
    }

    const Evaluation val = evaluate_labels(params, cfg, val_set);
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(n);
    entry.val_loss = hooks.val_loss_override ? hooks.val_loss_override(epoch, val.loss) : val.loss;
    entry.val_mae = val.total_mae;
    entry.lr = lr;
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (stopper.update(epoch, entry.val_loss)) result.best_params = params;
    result.log.push_back(entry);
    result.epochs_run = epoch;
    if (hooks.on_epoch) hooks.on_epoch(entry);
    if (stopper.should_stop()) {
      result.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  return result;
}

}  // namespace emotrack::training
