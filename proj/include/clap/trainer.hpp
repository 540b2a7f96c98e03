// Training loop: seeded shuffling, SGD with momentum, per-epoch validation,
// best-validation snapshot, divergence guard, and evaluation reports.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "clap/config.hpp"
#include "clap/data.hpp"
#include "clap/errors.hpp"
#include "clap/metrics.hpp"
#include "clap/model.hpp"
#include "clap/optimizer.hpp"
#include "clap/parallel.hpp"
#include "clap/random.hpp"

namespace clap {

enum class LrSchedule { constant, step };

inline const char* to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "step"; }

inline LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "step") return LrSchedule::step;
  throw InvalidConfig("unknown lr schedule '" + s + "' (expected constant or step)");
}

struct TrainConfig {
  std::size_t epochs = 300;
  double learning_rate = 0.008;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  LrSchedule schedule = LrSchedule::constant;
  double step_factor = 0.1;
  std::size_t step_every = 100;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only best and final
  bool augment = false;

  // A zero learning rate is accepted here as a null update; the command line
  // requires a positive rate.
  void validate() const {
    if (epochs < 1) throw InvalidConfig("epochs must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw InvalidConfig("learning rate must be a finite non-negative number");
    }
    if (batch_size < 1) throw InvalidConfig("batch size must be at least 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("momentum must lie in [0, 1)");
    if (schedule == LrSchedule::step && (step_every < 1 || !(step_factor > 0.0))) {
      throw InvalidConfig("step schedule needs step_every >= 1 and a positive factor");
    }
  }

  // Learning rate for a 1-based epoch.
  double lr_at(std::size_t epoch) const {
    if (schedule == LrSchedule::constant) return learning_rate;
    return learning_rate * std::pow(step_factor, static_cast<double>((epoch - 1) / step_every));
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("epochs", epochs);
    kv.set("learning_rate", learning_rate);
    kv.set("batch_size", batch_size);
    kv.set("momentum", momentum);
    kv.set("schedule", to_string(schedule));
    kv.set("step_factor", step_factor);
    kv.set("step_every", step_every);
    kv.set("seed", seed);
    kv.set("checkpoint_every", checkpoint_every);
    kv.set("augment", augment ? "true" : "false");
    return kv;
  }

  static TrainConfig from_kv(const KeyValues& kv) {
    TrainConfig c;
    c.epochs = kv.get_number<std::size_t>("epochs");
    c.learning_rate = kv.get_number<double>("learning_rate");
    c.batch_size = kv.get_number<std::size_t>("batch_size");
    c.momentum = kv.get_number<double>("momentum");
    c.schedule = parse_lr_schedule(kv.get("schedule"));
    c.step_factor = kv.get_number<double>("step_factor");
    c.step_every = kv.get_number<std::size_t>("step_every");
    c.seed = kv.get_number<std::uint64_t>("seed");
    c.checkpoint_every = kv.get_number<std::size_t>("checkpoint_every");
    const std::string& a = kv.get("augment");
    if (a != "true" && a != "false") throw InvalidConfig("augment must be true or false");
    c.augment = a == "true";
    return c;
  }

  bool operator==(const TrainConfig&) const = default;
};

// One history line: "epoch=E lr=.. train_loss=.. train_acc=.. val_loss=.. val_acc=..".
struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0, train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;

  std::string to_line() const {
    auto num = [](double v) {
      char buf[64];
      auto r = std::to_chars(buf, buf + sizeof buf, v);
      return std::string(buf, r.ptr);
    };
    return "epoch=" + std::to_string(epoch) + " lr=" + num(lr) + " train_loss=" + num(train_loss) +
           " train_acc=" + num(train_acc) + " val_loss=" + num(val_loss) + " val_acc=" + num(val_acc);
  }

  static EpochRecord parse(const std::string& line) {
    EpochRecord r;
    std::istringstream in(line);
    std::string field;
    int seen = 0;
    while (in >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw InvalidConfig("malformed history field '" + field + "'");
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      double v = 0;
      auto res = std::from_chars(value.data(), value.data() + value.size(), v);
      if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw InvalidConfig("malformed history value '" + field + "'");
      }
      if (key == "epoch") r.epoch = static_cast<std::size_t>(v);
      else if (key == "lr") r.lr = v;
      else if (key == "train_loss") r.train_loss = v;
      else if (key == "train_acc") r.train_acc = v;
      else if (key == "val_loss") r.val_loss = v;
      else if (key == "val_acc") r.val_acc = v;
      else throw InvalidConfig("unknown history field '" + key + "'");
      ++seen;
    }
    if (seen != 6) throw InvalidConfig("history line needs 6 fields: '" + line + "'");
    return r;
  }
};

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& probs) {
  std::vector<std::size_t> out(probs.dim(0));
  const std::size_t K = probs.dim(1);
  for (std::size_t n = 0; n < out.size(); ++n) {
    const T* row = probs.ptr() + n * K;
    out[n] = static_cast<std::size_t>(std::max_element(row, row + K) - row);
  }
  return out;
}

// Inference-mode pass over `records`: confusion-based metrics plus mean loss.
template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<DatasetRecord>& records, std::size_t batch_size = 32) {
  if (records.empty()) throw EmptyDataset("evaluation set is empty");
  if (batch_size == 0) throw InvalidConfig("batch size must be at least 1");
  const std::size_t K = model.config().num_classes;
  std::vector<std::size_t> order(records.size()), truths, preds;
  std::iota(order.begin(), order.end(), 0);
  double loss_sum = 0;
  for (std::size_t b = 0; b < records.size(); b += batch_size) {
    const std::size_t e = std::min(records.size(), b + batch_size);
    auto x = stack_images<T>(records, order, b, e);
    std::vector<std::size_t> labels;
    for (std::size_t i = b; i < e; ++i) labels.push_back(records[i].label);
    validate_labels(labels, K);
    auto probs = model.predict(x);
    loss_sum += static_cast<double>(cross_entropy(probs, labels)) * static_cast<double>(e - b);
    auto p = argmax_rows(probs);
    truths.insert(truths.end(), labels.begin(), labels.end());
    preds.insert(preds.end(), p.begin(), p.end());
  }
  auto report = metrics_from_confusion(confusion_matrix(truths, preds, K));
  report.loss = loss_sum / static_cast<double>(records.size());
  return report;
}

// Everything needed to resume training exactly.
template <typename T>
struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::vector<Tensor<T>> velocity;
  double best_val_acc = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<Tensor<T>> best_params;  // values of every store entry at best_epoch
  std::vector<EpochRecord> history;

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("epoch", epoch);
    kv.set("best_val_acc", best_val_acc);
    kv.set("best_val_loss", best_val_loss);
    kv.set("best_epoch", best_epoch);
    return kv;
  }

  void load_kv(const KeyValues& kv) {
    epoch = kv.get_number<std::size_t>("epoch", 0);
    best_val_acc = kv.get_number<double>("best_val_acc", -1.0);
    best_val_loss = kv.contains("best_val_loss") && kv.get("best_val_loss") != "inf"
                        ? kv.get_number<double>("best_val_loss")
                        : std::numeric_limits<double>::infinity();
    best_epoch = kv.get_number<std::size_t>("best_epoch", 0);
  }
};

template <typename T>
class Trainer {
 public:
  // Called after every epoch; `improved` marks a new best validation result.
  using EpochSink = std::function<void(const EpochRecord&, bool improved)>;

  Trainer(Model<T>& model, TrainConfig config, TrainState<T> state = {})
      : model_(model), config_(std::move(config)), state_(std::move(state)), opt_(static_cast<T>(config_.momentum)) {
    config_.validate();
    opt_.velocity() = state_.velocity;
  }

  const TrainConfig& config() const { return config_; }
  const TrainState<T>& state() const { return state_; }

  // Current optimizer state folded into the train state.
  TrainState<T> snapshot_state() const {
    TrainState<T> s = state_;
    s.velocity = opt_.velocity();
    return s;
  }

  // Trains from the stored epoch up to config().epochs.
  const std::vector<EpochRecord>& fit(const std::vector<DatasetRecord>& train, const std::vector<DatasetRecord>& val,
                                      const EpochSink& sink = {}) {
    if (train.empty()) throw EmptyDataset("training set is empty");
    if (val.empty()) throw EmptyDataset("validation set is empty");
    while (state_.epoch < config_.epochs) {
      bool improved = false;
      const EpochRecord rec = run_epoch(train, val, improved);
      if (sink) sink(rec, improved);
    }
    return state_.history;
  }

  // Copies the best-validation parameters back into the model.
  void restore_best() {
    if (state_.best_params.empty()) return;
    auto& store = model_.parameters();
    for (std::size_t i = 0; i < store.size(); ++i) store[i].value = state_.best_params[i];
  }

  EpochRecord run_epoch(const std::vector<DatasetRecord>& train, const std::vector<DatasetRecord>& val,
                        bool& improved) {
    const std::size_t epoch = state_.epoch + 1;
    const double lr = config_.lr_at(epoch);
    const std::size_t K = model_.config().num_classes;
    auto& store = model_.parameters();

    // Last good state for the divergence guard.
    std::vector<Tensor<T>> good_values;
    for (const auto& p : store) good_values.push_back(p.value);
    const std::vector<Tensor<T>> good_velocity = opt_.velocity();

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config_.seed, {1, epoch}));
    shuffle_rng.shuffle(order.begin(), order.end());

    AugmentParams aug;
    if (config_.augment) {
      aug.crop = model_.config().input_height;
      aug.canvas = train.front().image.dim(1);
    }

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t b = 0, batch = 0; b < order.size(); b += config_.batch_size, ++batch) {
      const std::size_t e = std::min(order.size(), b + config_.batch_size);
      Tensor<T> x;
      if (config_.augment) {
        std::vector<DatasetRecord> views(e - b);
        parallel_for(e - b, [&](std::size_t i) {
          Rng rng(derive_seed(config_.seed, {2, epoch, order[b + i]}));
          views[i] = augment(train[order[b + i]], rng, aug);
        });
        std::vector<std::size_t> idx(views.size());
        std::iota(idx.begin(), idx.end(), 0);
        x = stack_images<T>(views, idx, 0, views.size());
      } else {
        x = stack_images<T>(train, order, b, e);
      }
      std::vector<std::size_t> labels;
      for (std::size_t i = b; i < e; ++i) labels.push_back(train[order[i]].label);
      validate_labels(labels, K);

      auto res = model_.loss_and_grads(x, labels, derive_seed(config_.seed, {3, epoch, batch}));
      bool finite = std::isfinite(static_cast<double>(res.loss));
      for (std::size_t i = 0; finite && i < store.size(); ++i) {
        if (store[i].trainable) finite = store[i].grad.all_finite();
      }
      if (!finite) diverge("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch), good_values, good_velocity);
      opt_.step(store, static_cast<T>(lr));
      loss_sum += static_cast<double>(res.loss) * static_cast<double>(e - b);
      auto pred = argmax_rows(res.probs);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    }
    store.zero_grad();

    bool params_finite = true;
    for (const auto& p : store) params_finite = params_finite && p.value.all_finite();
    if (!params_finite) diverge("non-finite parameters after epoch " + std::to_string(epoch), good_values, good_velocity);
    const auto report = evaluate(model_, val, config_.batch_size);
    if (!std::isfinite(report.loss)) {
      diverge("non-finite validation loss after epoch " + std::to_string(epoch), good_values, good_velocity);
    }
    EpochRecord rec{epoch,
                    lr,
                    loss_sum / static_cast<double>(train.size()),
                    static_cast<double>(correct) / static_cast<double>(train.size()),
                    report.loss,
                    report.accuracy};
    improved = rec.val_acc > state_.best_val_acc ||
               (rec.val_acc == state_.best_val_acc && rec.val_loss < state_.best_val_loss);
    if (improved) {
      state_.best_val_acc = rec.val_acc;
      state_.best_val_loss = rec.val_loss;
      state_.best_epoch = epoch;
      state_.best_params.clear();
      for (const auto& p : store) state_.best_params.push_back(p.value);
    }
    state_.epoch = epoch;
    state_.history.push_back(rec);
    state_.velocity = opt_.velocity();
    return rec;
  }

 private:
  [[noreturn]] void diverge(const std::string& what, const std::vector<Tensor<T>>& values,
                            const std::vector<Tensor<T>>& velocity) {
    auto& store = model_.parameters();
    for (std::size_t i = 0; i < store.size(); ++i) store[i].value = values[i];
    opt_.velocity() = velocity;
    store.zero_grad();
    throw DivergenceDetected(what + "; parameters restored to the end of epoch " + std::to_string(state_.epoch));
  }

  Model<T>& model_;
  TrainConfig config_;
  TrainState<T> state_;
  SgdMomentum<T> opt_;
};

inline std::string history_text(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) out += r.to_line() + "\n";
  return out;
}

}  // namespace clap
