#include "hfmf/nn.hpp"

#include <algorithm>
#include <cmath>

#include "hfmf/errors.hpp"

namespace hfmf {

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) Tensor(p.tensor).zero_grad();
}

ParamSnapshot snapshot(const ParamList& params) {
  ParamSnapshot snap;
  snap.reserve(params.size());
  for (const auto& p : params)
    snap.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return snap;
}

void restore(const ParamList& params, const ParamSnapshot& snap) {
  if (snap.size() != params.size())
    throw ContractError("restore: snapshot has " + std::to_string(snap.size()) +
                        " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto dst = t.mutable_data();
    if (snap[i].size() != dst.size())
      throw ContractError("restore: size mismatch for " + params[i].name);
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

Tensor normal_param(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape), true);
  for (double& v : t.mutable_data()) v = rng.normal() * stddev;
  return t;
}

Tensor constant_param(Shape shape, double value) {
  Tensor t(std::move(shape), true);
  std::fill(t.mutable_data().begin(), t.mutable_data().end(), value);
  return t;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double gain)
    : weight(normal_param({in, out}, rng,
                          gain * std::sqrt(2.0 / static_cast<double>(in)))),
      bias(constant_param({out}, 0.0)) {}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv::Conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_,
           std::size_t padding_, Rng& rng)
    : kernel(normal_param({out, in, k, k}, rng,
                          std::sqrt(2.0 / static_cast<double>(in * k * k)))),
      bias(constant_param({out}, 0.0)),
      stride(stride_),
      padding(padding_) {}

void Conv::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".kernel", kernel});
  out.push_back({prefix + ".bias", bias});
}

DepthwiseConv::DepthwiseConv(std::size_t channels, std::size_t k,
                             std::size_t stride_, std::size_t padding_, Rng& rng)
    : kernel(normal_param({channels, 1, k, k}, rng,
                          std::sqrt(2.0 / static_cast<double>(k * k)))),
      bias(constant_param({channels}, 0.0)),
      stride(stride_),
      padding(padding_) {}

void DepthwiseConv::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".kernel", kernel});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim)
    : gamma(constant_param({dim}, 1.0)), beta(constant_param({dim}, 0.0)) {}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

Mlp2::Mlp2(std::size_t in, std::size_t hidden_dim, std::size_t out_dim, Rng& rng)
    : hidden(in, hidden_dim, rng), out(hidden_dim, out_dim, rng, 0.5) {}

void Mlp2::collect(ParamList& params, const std::string& prefix) const {
  hidden.collect(params, prefix + ".hidden");
  out.collect(params, prefix + ".out");
}

}  // namespace hfmf
