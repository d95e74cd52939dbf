#pragma once
// Platt scaling of a scalar logit and expected calibration error.

#include <span>
#include <string>
#include <vector>

namespace hfmf {

struct PlattParams {
  double A = 1.0;
  double B = 0.0;
  double final_nll = 0.0;
  int iterations = 0;
};

/// sigma(A z + B).
double apply_platt(double z, const PlattParams& params);
/// A z + B, the log-odds of apply_platt(z).
inline double platt_log_odds(double z, const PlattParams& p) { return p.A * z + p.B; }

/// Mean binary negative log-likelihood of sigma(A z + B) against labels.
double platt_nll(std::span<const double> logits, std::span<const int> labels,
                 double A, double B);

struct PlattFitOptions {
  double grad_tol = 1e-8;
  int max_iterations = 10000;
};

/// Damped Newton from (A, B) = (1, 0) with a backtracking line search, so the
/// returned NLL never exceeds the starting one. Labels must contain both
/// classes (DegenerateInputError otherwise).
PlattParams fit_platt(std::span<const double> logits, std::span<const int> labels,
                      const PlattFitOptions& options = {});

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;    // 0 for empty bins
  double confidence = 0.0;  // 0 for empty bins
};

struct ReliabilityTable {
  std::vector<ReliabilityBin> bins;
  std::size_t total = 0;

  /// Sum over bins of (count / total) * |accuracy - confidence|.
  double ece() const;
};

/// Bins samples by confidence max(p, 1 - p) into n_bins equal-width bins over
/// [0, 1]; bin i holds i/n <= c < (i+1)/n, the last bin is closed. A sample
/// is correct when [p >= 0.5] equals its label.
ReliabilityTable reliability_table(std::span<const double> probs,
                                   std::span<const int> labels, int n_bins);
double ece(std::span<const double> probs, std::span<const int> labels, int n_bins);

/// CSV with header bin_lo,bin_hi,count,accuracy,confidence.
std::string reliability_csv(const ReliabilityTable& table);

}  // namespace hfmf
