#include "hfmf/training.hpp"

#include <cstdlib>
#include <sstream>

namespace hfmf {

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ConfigurationError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigurationError("early_stop_patience must be >= 1");
  if (batch_size < 1) throw ConfigurationError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigurationError("learning_rate must be > 0");
  if (split_train <= 0.0 || split_val <= 0.0 || split_test < 0.0 ||
      std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
    throw ConfigurationError("split fractions must be positive and sum to 1");
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& e : history.epochs)
    os << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_loss << ','
       << e.val_acc << '\n';
  return os.str();
}

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  Metrics m;
  m.tp = tp, m.fp = fp, m.tn = tn, m.fn = fn;
  const std::size_t total = tp + fp + tn + fn;
  if (total > 0) m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (m.precision + m.recall > 0)
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw DimensionError("compute_metrics: predictions and labels differ in length");
  if (predictions.empty()) throw ContractError("compute_metrics: empty input");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] == 1, y = labels[i] == 1;
    tp += p && y;
    fp += p && !y;
    tn += !p && !y;
    fn += !p && y;
  }
  return metrics_from_counts(tp, fp, tn, fn);
}

std::size_t evaluation_threads(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HFMF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

void require_both_classes(std::span<const int> labels, const std::string& what) {
  bool real = false, fake = false;
  for (int y : labels) (y == 1 ? fake : real) = true;
  if (!real || !fake)
    throw DegenerateInputError(what + " must contain both real and fake samples");
}

}  // namespace hfmf
