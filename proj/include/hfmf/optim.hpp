#pragma once

#include <cstdint>
#include <vector>

#include "hfmf/tensor.hpp"

namespace hfmf {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are allocated per parameter on
/// construction and always match the parameter shapes.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions options = {});

  /// Applies one update from the current grads, increments step_count and
  /// zeroes the grads. Throws ContractError if a parameter carries no grad.
  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_count_; }
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_count_ = 0;
};

}  // namespace hfmf
