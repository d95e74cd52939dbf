#pragma once
// Shared helpers for the unit and acceptance suites: random tensors, loop
// oracles and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <unistd.h>

#include "hfmf/rng.hpp"
#include "hfmf/tensor.hpp"

namespace hfmf::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false,
                            double scale = 1.0) {
  Tensor t(std::move(shape), requires_grad);
  for (double& v : t.mutable_data()) v = rng.normal() * scale;
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Naive reference implementations. Deliberately share no code with the
// engine's kernels.
inline std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

inline std::vector<double> conv2d_oracle(const Tensor& x, const Tensor& w,
                                         const Tensor& bias, std::size_t stride,
                                         std::size_t pad) {
  const long C = static_cast<long>(x.dim(0)), H = static_cast<long>(x.dim(1)),
             W = static_cast<long>(x.dim(2));
  const long O = static_cast<long>(w.dim(0)), KH = static_cast<long>(w.dim(2)),
             KW = static_cast<long>(w.dim(3));
  const long s = static_cast<long>(stride), p = static_cast<long>(pad);
  const long OH = (H + 2 * p - KH) / s + 1, OW = (W + 2 * p - KW) / s + 1;
  std::vector<double> out(static_cast<std::size_t>(O * OH * OW), 0.0);
  for (long o = 0; o < O; ++o)
    for (long oy = 0; oy < OH; ++oy)
      for (long ox = 0; ox < OW; ++ox) {
        double acc = bias.defined() ? bias[static_cast<std::size_t>(o)] : 0.0;
        for (long c = 0; c < C; ++c)
          for (long i = 0; i < KH; ++i)
            for (long j = 0; j < KW; ++j) {
              const long y = oy * s + i - p, xx = ox * s + j - p;
              if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
              acc += w[static_cast<std::size_t>(((o * C + c) * KH + i) * KW + j)] *
                     x[static_cast<std::size_t>((c * H + y) * W + xx)];
            }
        out[static_cast<std::size_t>((o * OH + oy) * OW + ox)] = acc;
      }
  return out;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose +-eps probe crossed a ReLU kink
};

/// Compares reverse-mode gradients of the scalar `loss_fn()` with respect to
/// each tensor in `wrt` against central differences. At most
/// `coords_per_tensor` coordinates per tensor are probed (sampled without
/// replacement when the tensor is larger). The relative error of a tensor is
/// max|analytic - numeric| / max(max|analytic|, max|numeric|, floor).
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                       std::vector<Tensor> wrt, Rng& rng,
                                       std::size_t coords_per_tensor = 1u << 30,
                                       double eps = 1e-4, double floor = 1e-7) {
  for (Tensor& t : wrt) t.zero_grad();
  Tape::current().clear();
  backward(loss_fn());
  GradCheckResult result;
  for (Tensor& t : wrt) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(coords_per_tensor);
    }
    double max_err = 0.0, max_mag = floor;
    for (std::size_t idx : coords) {
      auto data = t.mutable_data();
      const double orig = data[idx];
      double fp, fm;
      std::vector<unsigned char> pat_p, pat_m;
      {
        NoGradGuard ng;
        data[idx] = orig + eps;
        {
          debug::ActivationPatternRecorder rec;
          fp = loss_fn().item();
          pat_p = rec.pattern();
        }
        data[idx] = orig - eps;
        {
          debug::ActivationPatternRecorder rec;
          fm = loss_fn().item();
          pat_m = rec.pattern();
        }
        data[idx] = orig;
      }
      if (pat_p != pat_m) {
        ++result.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      max_err = std::max(max_err, std::abs(numeric - analytic[idx]));
      max_mag = std::max({max_mag, std::abs(numeric), std::abs(analytic[idx])});
      ++result.checked;
    }
    result.max_rel_error = std::max(result.max_rel_error, max_err / max_mag);
  }
  for (Tensor& t : wrt) t.zero_grad();
  return result;
}

// Explicit scores, explicit softmax, explicit mix.
inline std::vector<double> hds_oracle(const Tensor& q, const Tensor& kv) {
  const std::size_t n = q.dim(0), m = kv.dim(0), d = q.dim(1);
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> score(m);
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q[i * d + c] * kv[j * d + c];
      score[j] = s / std::sqrt(static_cast<double>(d));
    }
    const double mx = *std::max_element(score.begin(), score.end());
    double z = 0.0;
    for (double& s : score) z += (s = std::exp(s - mx));
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += score[j] / z * kv[j * d + c];
  }
  return out;
}

// Independent binning: walk the bins, test membership by edge comparison.
inline double ece_oracle(const std::vector<double>& p, const std::vector<int>& y, int n_bins) {
  const std::size_t n = p.size();
  double e = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    const double lo = static_cast<double>(b) / n_bins, hi = static_cast<double>(b + 1) / n_bins;
    std::size_t count = 0, correct = 0;
    double conf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = p[i] > 1.0 - p[i] ? p[i] : 1.0 - p[i];
      const bool in = c >= lo && (b == n_bins - 1 ? c <= hi : c < hi);
      if (!in) continue;
      ++count;
      conf += c;
      if ((p[i] >= 0.5 ? 1 : 0) == y[i]) ++correct;
    }
    if (count == 0) continue;
    const double acc = static_cast<double>(correct) / static_cast<double>(count);
    e += static_cast<double>(count) / static_cast<double>(n) *
         std::abs(acc - conf / static_cast<double>(count));
  }
  return e;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("hfmf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace hfmf::testing
