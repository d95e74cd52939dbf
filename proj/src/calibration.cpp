#include "hfmf/calibration.hpp"

#include <cmath>
#include <sstream>

#include "hfmf/errors.hpp"

namespace hfmf {
namespace {

// log(1 + exp(s)) - y s, stable for large |s|.
double nll_term(double s, int y) {
  return std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))) - (y ? s : 0.0);
}

double sigmoid(double s) {
  if (s >= 0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

void check_pairs(std::size_t a, std::size_t b, const char* who) {
  if (a != b)
    throw DimensionError(std::string(who) + ": " + std::to_string(a) + " values but " +
                         std::to_string(b) + " labels");
}

}  // namespace

double apply_platt(double z, const PlattParams& params) {
  return sigmoid(platt_log_odds(z, params));
}

double platt_nll(std::span<const double> logits, std::span<const int> labels,
                 double A, double B) {
  check_pairs(logits.size(), labels.size(), "platt_nll");
  if (logits.empty()) throw ContractError("platt_nll: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    total += nll_term(A * logits[i] + B, labels[i]);
  return total / static_cast<double>(logits.size());
}

PlattParams fit_platt(std::span<const double> logits, std::span<const int> labels,
                      const PlattFitOptions& options) {
  check_pairs(logits.size(), labels.size(), "fit_platt");
  if (logits.size() < 2) throw ContractError("fit_platt: need at least 2 samples");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::isfinite(logits[i])) throw ContractError("fit_platt: non-finite logit");
    if (labels[i] != 0 && labels[i] != 1) throw ContractError("fit_platt: labels must be 0 or 1");
    positives += static_cast<std::size_t>(labels[i]);
  }
  if (positives == 0 || positives == labels.size())
    throw DegenerateInputError("fit_platt: labels contain a single class; the optimum is unbounded");

  const double n = static_cast<double>(logits.size());
  double A = 1.0, B = 0.0;
  double nll = platt_nll(logits, labels, A, B);
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double z = logits[i];
      const double p = sigmoid(A * z + B);
      const double r = p - labels[i];
      const double w = p * (1.0 - p);
      ga += r * z;
      gb += r;
      haa += w * z * z;
      hab += w * z;
      hbb += w;
    }
    ga /= n, gb /= n, haa /= n, hab /= n, hbb /= n;
    if (std::hypot(ga, gb) < options.grad_tol) break;

    // Levenberg damping keeps the system positive definite near separation.
    const double lambda = 1e-10 + 1e-6 * (haa + hbb);
    haa += lambda;
    hbb += lambda;
    const double det = haa * hbb - hab * hab;
    double da = -(hbb * ga - hab * gb) / det;
    double db = -(haa * gb - hab * ga) / det;
    if (!std::isfinite(da) || !std::isfinite(db)) da = -ga, db = -gb;

    double step = 1.0;
    bool improved = false;
    for (int k = 0; k < 60; ++k, step *= 0.5) {
      const double na = A + step * da, nb = B + step * db;
      const double cand = platt_nll(logits, labels, na, nb);
      if (cand <= nll) {
        improved = cand < nll || (na == A && nb == B);
        A = na, B = nb, nll = cand;
        break;
      }
    }
    if (!improved) break;  // no representable descent left
  }
  return {A, B, nll, it};
}

double ReliabilityTable::ece() const {
  double e = 0.0;
  for (const auto& b : bins)
    if (b.count > 0)
      e += static_cast<double>(b.count) / static_cast<double>(total) *
           std::abs(b.accuracy - b.confidence);
  return e;
}

ReliabilityTable reliability_table(std::span<const double> probs,
                                   std::span<const int> labels, int n_bins) {
  check_pairs(probs.size(), labels.size(), "reliability_table");
  if (probs.empty()) throw ContractError("ece: empty input");
  if (n_bins < 1) throw ConfigurationError("ece: n_bins must be >= 1");
  const auto nb = static_cast<std::size_t>(n_bins);
  ReliabilityTable t;
  t.total = probs.size();
  t.bins.resize(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    t.bins[i].lo = static_cast<double>(i) / n_bins;
    t.bins[i].hi = static_cast<double>(i + 1) / n_bins;
  }
  std::vector<std::size_t> correct(nb, 0);
  std::vector<double> conf_sum(nb, 0.0);
  for (std::size_t s = 0; s < probs.size(); ++s) {
    const double p = probs[s];
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("ece: probability outside [0, 1]");
    const double c = std::max(p, 1.0 - p);
    auto i = std::min(nb - 1, static_cast<std::size_t>(c * n_bins));
    while (i > 0 && c < t.bins[i].lo) --i;
    while (i + 1 < nb && c >= t.bins[i].hi) ++i;
    const int predicted = p >= 0.5 ? 1 : 0;
    ++t.bins[i].count;
    if (predicted == labels[s]) ++correct[i];
    conf_sum[i] += c;
  }
  for (std::size_t i = 0; i < nb; ++i) {
    auto& b = t.bins[i];
    if (b.count == 0) continue;
    b.accuracy = static_cast<double>(correct[i]) / static_cast<double>(b.count);
    b.confidence = conf_sum[i] / static_cast<double>(b.count);
  }
  return t;
}

double ece(std::span<const double> probs, std::span<const int> labels, int n_bins) {
  return reliability_table(probs, labels, n_bins).ece();
}

std::string reliability_csv(const ReliabilityTable& table) {
  std::ostringstream os;
  os.precision(17);
  os << "bin_lo,bin_hi,count,accuracy,confidence\n";
  for (const auto& b : table.bins)
    os << b.lo << ',' << b.hi << ',' << b.count << ',' << b.accuracy << ',' << b.confidence << '\n';
  return os.str();
}

}  // namespace hfmf
