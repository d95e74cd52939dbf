#pragma once
// Minibatch Adam training with early stopping on validation loss, binary
// classification metrics, and sharded evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <tuple>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "hfmf/errors.hpp"
#include "hfmf/nn.hpp"
#include "hfmf/optim.hpp"
#include "hfmf/rng.hpp"

namespace hfmf {

struct TrainConfig {
  std::uint64_t seed = 42;
  int max_epochs = 100;
  int patience = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double split_train = 0.70;
  double split_val = 0.15;
  double split_test = 0.15;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;

  const EpochRecord& best() const { return epochs.at(static_cast<std::size_t>(best_epoch - 1)); }
};

/// CSV with header epoch,train_loss,train_acc,val_loss,val_acc.
std::string history_csv(const TrainHistory& history);

/// Argmax decision; exact ties go to class 0 (real).
inline int predict_class(const std::array<double, 2>& logits) {
  return logits[1] > logits[0] ? 1 : 0;
}

struct Metrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double precision = 0.0;  // 0 when tp + fp == 0
  double recall = 0.0;     // 0 when tp + fn == 0
  double f1 = 0.0;

  std::size_t total() const { return tp + fp + tn + fn; }
};

/// Metrics from confusion counts; the positive class is fake (1).
Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels);

/// Worker count for evaluation: HFMF_THREADS if set and positive, else the
/// hardware concurrency, never more than `jobs`.
std::size_t evaluation_threads(std::size_t jobs);

/// Throws DegenerateInputError unless both classes occur in `labels`.
void require_both_classes(std::span<const int> labels, const std::string& what);

/// Logits for every input without recording on the tape, sharded over
/// evaluation_threads() workers. Output order matches input order.
template <class Input>
std::vector<std::array<double, 2>> predict_logits(const Model<Input>& model,
                                                  const std::vector<Input>& inputs) {
  std::vector<std::array<double, 2>> out(inputs.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    NoGradGuard guard;
    for (std::size_t i = begin; i < end; ++i) {
      const Tensor l = model.logits(inputs[i]);
      out[i] = {l[0], l[1]};
    }
  };
  const std::size_t workers = evaluation_threads(inputs.size());
  if (workers <= 1) {
    work(0, inputs.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (inputs.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(inputs.size(), b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  for (auto& t : pool) t.join();
  return out;
}

template <class Input>
Metrics evaluate(const Model<Input>& model, const std::vector<Input>& inputs,
                 std::span<const int> labels) {
  if (inputs.empty()) throw ContractError("evaluate: empty split");
  if (inputs.size() != labels.size())
    throw DimensionError("evaluate: inputs and labels differ in length");
  const auto logits = predict_logits(model, inputs);
  std::vector<int> pred(logits.size());
  std::transform(logits.begin(), logits.end(), pred.begin(), predict_class);
  return compute_metrics(pred, labels);
}

/// Mean cross-entropy and accuracy of `model` on a labelled set.
template <class Input>
std::pair<double, double> loss_and_accuracy(const Model<Input>& model,
                                            const std::vector<Input>& inputs,
                                            std::span<const int> labels) {
  const auto logits = predict_logits(model, inputs);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto& l = logits[i];
    const double m = std::max(l[0], l[1]);
    const double lse = m + std::log(std::exp(l[0] - m) + std::exp(l[1] - m));
    loss += lse - l[static_cast<std::size_t>(labels[i])];
    correct += predict_class(l) == labels[i];
  }
  const double n = static_cast<double>(logits.size());
  return {loss / n, static_cast<double>(correct) / n};
}

/// Trains every parameter of `model` with Adam on minibatch-mean
/// cross-entropy. After each epoch the validation loss is measured; training
/// stops once it has not improved for `patience` epochs, and the parameters of
/// the best epoch are restored.
template <class Input>
TrainHistory train_module(Model<Input>& model, const std::vector<Input>& train_x,
                          std::span<const int> train_y, const std::vector<Input>& val_x,
                          std::span<const int> val_y, const TrainConfig& config,
                          const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  if (train_x.size() != train_y.size() || val_x.size() != val_y.size())
    throw DimensionError("train_module: inputs and labels differ in length");
  require_both_classes(train_y, "training split");
  require_both_classes(val_y, "validation split");

  const ParamList params = model.parameters();
  AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  Adam adam(tensors_of(params), opts);
  Rng rng(config.seed ^ 0x747261696eULL);

  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), 0);
  TrainHistory history;
  double best_val = std::numeric_limits<double>::infinity();
  ParamSnapshot best = snapshot(params);
  int since_best = 0;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const Tensor logits = model.logits(train_x[i]);
        const int y = train_y[i];
        const Tensor loss = cross_entropy(logits, std::span<const int>(&y, 1));
        loss_sum += loss.item();
        correct += predict_class({logits[0], logits[1]}) == y;
        backward(scale(loss, inv));
      }
      adam.step();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    std::tie(rec.val_loss, rec.val_acc) = loss_and_accuracy(model, val_x, val_y);
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best = snapshot(params);
      history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      history.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  restore(params, best);
  return history;
}

}  // namespace hfmf
