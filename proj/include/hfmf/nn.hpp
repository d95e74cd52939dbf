#pragma once
// Parameter containers and the handful of layers shared by every network.

#include <string>
#include <vector>

#include "hfmf/rng.hpp"
#include "hfmf/tensor.hpp"

namespace hfmf {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

std::vector<Tensor> tensors_of(const ParamList& params);
void zero_grads(const ParamList& params);

/// Value copy of every parameter, in list order.
using ParamSnapshot = std::vector<std::vector<double>>;
ParamSnapshot snapshot(const ParamList& params);
void restore(const ParamList& params, const ParamSnapshot& snap);

/// Trainable tensor drawn from N(0, stddev^2).
Tensor normal_param(Shape shape, Rng& rng, double stddev);
Tensor constant_param(Shape shape, double value);

/// Something that maps an input to class logits and owns named parameters.
template <class Input>
class Model {
 public:
  virtual ~Model() = default;
  virtual Tensor logits(const Input& input) const = 0;
  virtual ParamList parameters() const = 0;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Linear() = default;
  /// He-normal weights scaled by `gain`, zero bias.
  Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Conv {
  Tensor kernel;  // [out x in x k x k]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
       std::size_t padding, Rng& rng);
  Tensor operator()(const Tensor& x) const {
    return conv2d(x, kernel, bias, stride, padding);
  }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct DepthwiseConv {
  Tensor kernel;  // [channels x 1 x k x k]
  Tensor bias;    // [channels]
  std::size_t stride = 1;
  std::size_t padding = 0;

  DepthwiseConv() = default;
  DepthwiseConv(std::size_t channels, std::size_t k, std::size_t stride,
                std::size_t padding, Rng& rng);
  Tensor operator()(const Tensor& x) const {
    return depthwise_conv2d(x, kernel, bias, stride, padding);
  }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Tensor operator()(const Tensor& x) const {
    return layer_norm_rows(x, gamma, beta);
  }
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Two-layer perceptron in -> hidden -> out with ReLU in between.
struct Mlp2 {
  Linear hidden;
  Linear out;

  Mlp2() = default;
  Mlp2(std::size_t in, std::size_t hidden_dim, std::size_t out_dim, Rng& rng);
  Tensor operator()(const Tensor& x) const { return out(relu(hidden(x))); }
  void collect(ParamList& params, const std::string& prefix) const;
};

}  // namespace hfmf
