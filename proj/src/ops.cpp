#include <algorithm>
#include <cmath>
#include <numeric>

#include "hfmf/errors.hpp"
#include "hfmf/simd/kernels.hpp"
#include "hfmf/tensor.hpp"

namespace hfmf {
namespace {

using Impl = detail::TensorImpl;
using ImplPtr = std::shared_ptr<Impl>;

const simd::KernelTable& K() { return simd::active_kernels(); }

bool needs_tape(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

/// Builds the output tensor and, when any input requires grad, records the
/// backward rule on the current tape.
Tensor emit(OpKind kind, Shape shape, std::vector<double> values,
            std::initializer_list<const Tensor*> inputs,
            std::function<void(const TapeNode&)> rule) {
  auto out = std::make_shared<Impl>();
  out->shape = std::move(shape);
  out->data = std::move(values);
  if (needs_tape(inputs)) {
    out->requires_grad = true;
    TapeNode node{kind, {}, out, std::move(rule)};
    for (const Tensor* t : inputs)
      if (t->defined()) node.parents.push_back(t->impl());
    Tape::current().record(std::move(node));
  }
  return Tensor(std::move(out));
}

bool wants(const ImplPtr& p) { return p->requires_grad; }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + " tensor, got " +
                         shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::vector<double> transpose_copy(const double* src, std::size_t rows,
                                   std::size_t cols) {
  std::vector<double> dst(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  return dst;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  K().gemm(m, n, k, a.data().data(), k, 1, b.data().data(), n, c.data(), n);
  return emit(OpKind::kMatMul, {m, n}, std::move(c), {&a, &b},
              [m, k, n](const TapeNode& node) {
                const Impl& A = *node.parents[0];
                const Impl& B = *node.parents[1];
                const double* dc = node.output->grad.data();
                if (wants(node.parents[0])) {
                  K().gemm_nt(m, k, n, dc, n, B.data.data(), n,
                              node.parents[0]->grad.data(), k);
                }
                if (wants(node.parents[1]))
                  K().gemm(k, n, m, A.data.data(), 1, k, dc, n,
                           node.parents[1]->grad.data(), n);
              });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  K().add(out.size(), a.data().data(), b.data().data(), out.data());
  return emit(OpKind::kAdd, a.shape(), std::move(out), {&a, &b},
              [](const TapeNode& node) {
                const double* g = node.output->grad.data();
                const std::size_t n = node.output->grad.size();
                for (const auto& p : node.parents)
                  if (wants(p)) K().axpy(n, 1.0, g, p->grad.data());
              });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  K().axpy(out.size(), -1.0, b.data().data(), out.data());
  return emit(OpKind::kSub, a.shape(), std::move(out), {&a, &b},
              [](const TapeNode& node) {
                const double* g = node.output->grad.data();
                const std::size_t n = node.output->grad.size();
                if (wants(node.parents[0]))
                  K().axpy(n, 1.0, g, node.parents[0]->grad.data());
                if (wants(node.parents[1]))
                  K().axpy(n, -1.0, g, node.parents[1]->grad.data());
              });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  K().mul(out.size(), a.data().data(), b.data().data(), out.data());
  return emit(OpKind::kMul, a.shape(), std::move(out), {&a, &b},
              [](const TapeNode& node) {
                const auto& g = node.output->grad;
                const Impl& A = *node.parents[0];
                const Impl& B = *node.parents[1];
                if (wants(node.parents[0]))
                  for (std::size_t i = 0; i < g.size(); ++i)
                    node.parents[0]->grad[i] += g[i] * B.data[i];
                if (wants(node.parents[1]))
                  for (std::size_t i = 0; i < g.size(); ++i)
                    node.parents[1]->grad[i] += g[i] * A.data[i];
              });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  K().scale(out.size(), factor, a.data().data(), out.data());
  return emit(OpKind::kScale, a.shape(), std::move(out), {&a},
              [factor](const TapeNode& node) {
                K().axpy(node.output->grad.size(), factor,
                         node.output->grad.data(), node.parents[0]->grad.data());
              });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.shape().back();
  if (bias.numel() != n || x.rank() > 2)
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
  const std::size_t m = x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < m; ++r)
    K().add(n, x.data().data() + r * n, bias.data().data(), out.data() + r * n);
  return emit(OpKind::kAddRowBias, x.shape(), std::move(out), {&x, &bias},
              [m, n](const TapeNode& node) {
                const double* g = node.output->grad.data();
                if (wants(node.parents[0]))
                  K().axpy(m * n, 1.0, g, node.parents[0]->grad.data());
                if (wants(node.parents[1]))
                  for (std::size_t r = 0; r < m; ++r)
                    K().axpy(n, 1.0, g + r * n, node.parents[1]->grad.data());
              });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() == 1) {
    Tensor row = reshape(x, {1, x.dim(0)});
    Tensor y = matmul(row, weight);
    if (bias.defined()) y = add_row_bias(y, bias);
    return reshape(y, {weight.dim(1)});
  }
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_row_bias(y, bias) : y;
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  K().relu(out.size(), x.data().data(), out.data());
  if (auto* sink = debug::active_pattern_sink())
    for (double v : x.data()) sink->push_back(v > 0.0 ? 1 : 0);
  return emit(OpKind::kRelu, x.shape(), std::move(out), {&x},
              [](const TapeNode& node) {
                const Impl& X = *node.parents[0];
                K().relu_grad(X.data.size(), X.data.data(),
                              node.output->grad.data(),
                              node.parents[0]->grad.data());
              });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const std::size_t n = x.numel();
  std::vector<double> out(n), dydx(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    const double u = kC * (v + kA * v * v * v);
    const double t = std::tanh(u);
    out[i] = 0.5 * v * (1.0 + t);
    dydx[i] = 0.5 * (1.0 + t) +
              0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
  }
  return emit(OpKind::kGelu, x.shape(), std::move(out), {&x},
              [dydx = std::move(dydx)](const TapeNode& node) {
                const auto& g = node.output->grad;
                auto& gx = node.parents[0]->grad;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dydx[i];
              });
}

Tensor sigmoid(const Tensor& x) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                    : std::exp(v) / (1.0 + std::exp(v));
  }
  return emit(OpKind::kSigmoid, x.shape(), out, {&x},
              [y = out](const TapeNode& node) {
                const auto& g = node.output->grad;
                auto& gx = node.parents[0]->grad;
                for (std::size_t i = 0; i < g.size(); ++i)
                  gx[i] += g[i] * y[i] * (1.0 - y[i]);
              });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = x.data().data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  return emit(OpKind::kSoftmaxRows, x.shape(), out, {&x},
              [y = out, m, n](const TapeNode& node) {
                const double* g = node.output->grad.data();
                double* gx = node.parents[0]->grad.data();
                for (std::size_t r = 0; r < m; ++r) {
                  const double* yr = y.data() + r * n;
                  const double* gr = g + r * n;
                  const double d = K().dot(n, yr, gr);
                  for (std::size_t j = 0; j < n; ++j)
                    gx[r * n + j] += yr[j] * (gr[j] - d);
                }
              });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n)
    throw DimensionError("layer_norm_rows: gamma/beta must have length " +
                         std::to_string(n));
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mu) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * gamma[j] + beta[j];
    }
  }
  return emit(
      OpKind::kLayerNorm, x.shape(), std::move(out), {&x, &gamma, &beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), m,
       n](const TapeNode& node) {
        const double* g = node.output->grad.data();
        const Impl& G = *node.parents[1];
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < m; ++r) {
          const double* gr = g + r * n;
          const double* xr = xhat.data() + r * n;
          if (wants(node.parents[1]))
            for (std::size_t j = 0; j < n; ++j)
              node.parents[1]->grad[j] += gr[j] * xr[j];
          if (wants(node.parents[2]))
            for (std::size_t j = 0; j < n; ++j) node.parents[2]->grad[j] += gr[j];
          if (!wants(node.parents[0])) continue;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = gr[j] * G.data[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xr[j];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          double* gx = node.parents[0]->grad.data() + r * n;
          for (std::size_t j = 0; j < n; ++j)
            gx[j] += inv_std[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
        }
      });
}

namespace {

struct ConvGeometry {
  std::size_t c, h, w, kh, kw, stride, pad, oh, ow;
};

ConvGeometry conv_geometry(const Tensor& input, std::size_t kh, std::size_t kw,
                           std::size_t stride, std::size_t padding,
                           const char* op) {
  require_rank(input, 3, op);
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be >= 1");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kh, kw, stride,
                 padding, 0, 0};
  if (g.h + 2 * padding < kh || g.w + 2 * padding < kw)
    throw DimensionError(std::string(op) + ": kernel " + std::to_string(kh) +
                         "x" + std::to_string(kw) +
                         " larger than padded input " +
                         shape_str(input.shape()) + " (padding " +
                         std::to_string(padding) + ")");
  g.oh = (g.h + 2 * padding - kh) / stride + 1;
  g.ow = (g.w + 2 * padding - kw) / stride + 1;
  return g;
}

// cols[(c*kh + i)*kw + j][oy*ow + ox] = x[c][oy*s + i - p][ox*s + j - p]
std::vector<double> im2col(const double* x, const ConvGeometry& g) {
  const std::size_t p = g.oh * g.ow;
  std::vector<double> cols(g.c * g.kh * g.kw * p, 0.0);
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols.data() + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const double* xrow = x + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t xx =
                static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                static_cast<std::ptrdiff_t>(g.pad);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
            row[oy * g.ow + ox] = xrow[xx];
          }
        }
      }
  return cols;
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t p = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* xrow = dx + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t xx =
                static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                static_cast<std::ptrdiff_t>(g.pad);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
            xrow[xx] += row[oy * g.ow + ox];
          }
        }
      }
}

void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
  if (bias.defined() && bias.numel() != channels)
    throw DimensionError(std::string(op) + ": bias " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(channels) +
                         " output channels");
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  require_rank(kernel, 4, "conv2d");
  if (kernel.dim(1) != input.dim(0))
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input is " +
                         shape_str(input.shape()));
  const ConvGeometry g =
      conv_geometry(input, kernel.dim(2), kernel.dim(3), stride, padding, "conv2d");
  const std::size_t oc = kernel.dim(0);
  check_bias(bias, oc, "conv2d");
  const std::size_t ckk = g.c * g.kh * g.kw, p = g.oh * g.ow;
  auto cols = im2col(input.data().data(), g);
  std::vector<double> out(oc * p, 0.0);
  if (bias.defined())
    for (std::size_t o = 0; o < oc; ++o)
      std::fill_n(out.data() + o * p, p, bias[o]);
  K().gemm(oc, p, ckk, kernel.data().data(), ckk, 1, cols.data(), p, out.data(), p);
  return emit(OpKind::kConv2d, {oc, g.oh, g.ow}, std::move(out),
              {&input, &kernel, &bias},
              [cols = std::move(cols), g, oc, ckk, p,
               has_bias = bias.defined()](const TapeNode& node) {
                const double* dout = node.output->grad.data();
                const auto& in = node.parents[0];
                const auto& ker = node.parents[1];
                if (wants(ker)) {
                  K().gemm_nt(oc, ckk, p, dout, p, cols.data(), p,
                              ker->grad.data(), ckk);
                }
                if (has_bias && wants(node.parents[2]))
                  for (std::size_t o = 0; o < oc; ++o) {
                    double s = 0.0;
                    for (std::size_t q = 0; q < p; ++q) s += dout[o * p + q];
                    node.parents[2]->grad[o] += s;
                  }
                if (wants(in)) {
                  std::vector<double> dcols(ckk * p, 0.0);
                  K().gemm(ckk, p, oc, ker->data.data(), 1, ckk, dout, p,
                           dcols.data(), p);
                  col2im_add(dcols.data(), g, in->grad.data());
                }
              });
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, std::size_t stride,
                        std::size_t padding) {
  require_rank(kernel, 4, "depthwise_conv2d");
  if (kernel.dim(0) != input.dim(0) || kernel.dim(1) != 1)
    throw DimensionError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) +
                         " incompatible with input " + shape_str(input.shape()));
  const ConvGeometry g = conv_geometry(input, kernel.dim(2), kernel.dim(3), stride,
                                       padding, "depthwise_conv2d");
  check_bias(bias, g.c, "depthwise_conv2d");
  const std::size_t p = g.oh * g.ow;
  std::vector<double> out(g.c * p, 0.0);
  const double* x = input.data().data();
  const double* w = kernel.data().data();
  auto for_each_tap = [g](auto&& fn) {
    for (std::size_t c = 0; c < g.c; ++c)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
          for (std::size_t i = 0; i < g.kh; ++i) {
            const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                     static_cast<std::ptrdiff_t>(g.pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t j = 0; j < g.kw; ++j) {
              const std::ptrdiff_t xx =
                  static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                  static_cast<std::ptrdiff_t>(g.pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
              fn((c * g.oh + oy) * g.ow + ox,
                 (c * g.h + static_cast<std::size_t>(y)) * g.w +
                     static_cast<std::size_t>(xx),
                 (c * g.kh + i) * g.kw + j);
            }
          }
  };
  for_each_tap([&](std::size_t o, std::size_t xi, std::size_t wi) {
    out[o] += w[wi] * x[xi];
  });
  if (bias.defined())
    for (std::size_t c = 0; c < g.c; ++c)
      for (std::size_t q = 0; q < p; ++q) out[c * p + q] += bias[c];
  return emit(OpKind::kDepthwiseConv2d, {g.c, g.oh, g.ow}, std::move(out),
              {&input, &kernel, &bias},
              [g, p, for_each_tap, has_bias = bias.defined()](const TapeNode& node) {
                const double* dout = node.output->grad.data();
                const auto& in = node.parents[0];
                const auto& ker = node.parents[1];
                const bool win = wants(in), wker = wants(ker);
                for_each_tap([&](std::size_t o, std::size_t xi, std::size_t wi) {
                  if (win) in->grad[xi] += ker->data[wi] * dout[o];
                  if (wker) ker->grad[wi] += in->data[xi] * dout[o];
                });
                if (has_bias && wants(node.parents[2]))
                  for (std::size_t c = 0; c < g.c; ++c)
                    for (std::size_t q = 0; q < p; ++q)
                      node.parents[2]->grad[c] += dout[c * p + q];
              });
}

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < m; ++r) K().axpy(n, 1.0, x.data().data() + r * n, out.data());
  const double inv = 1.0 / static_cast<double>(m);
  for (double& v : out) v *= inv;
  return emit(OpKind::kMeanRows, {n}, std::move(out), {&x},
              [m, n, inv](const TapeNode& node) {
                const double* g = node.output->grad.data();
                double* gx = node.parents[0]->grad.data();
                for (std::size_t r = 0; r < m; ++r) K().axpy(n, inv, g, gx + r * n);
              });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const std::size_t c = x.dim(0), p = x.dim(1) * x.dim(2);
  std::vector<double> out(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double s = 0.0;
    for (std::size_t q = 0; q < p; ++q) s += x[k * p + q];
    out[k] = s / static_cast<double>(p);
  }
  return emit(OpKind::kGlobalAvgPool, {c}, std::move(out), {&x},
              [c, p](const TapeNode& node) {
                const double inv = 1.0 / static_cast<double>(p);
                for (std::size_t k = 0; k < c; ++k) {
                  const double gk = node.output->grad[k] * inv;
                  double* gx = node.parents[0]->grad.data() + k * p;
                  for (std::size_t q = 0; q < p; ++q) gx[q] += gk;
                }
              });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const Tensor& t : parts) {
    if (Shape(t.shape().begin() + 1, t.shape().end()) != trailing)
      throw DimensionError("concat: trailing dimensions differ, " +
                           shape_str(parts[0].shape()) + " vs " +
                           shape_str(t.shape()));
    rows += t.dim(0);
  }
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  out.reserve(rows * shape_numel(trailing));
  for (const Tensor& t : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), trailing.begin(), trailing.end());

  auto result = std::make_shared<Impl>();
  result->shape = std::move(shape);
  result->data = std::move(out);
  bool record = false;
  if (grad_enabled())
    for (const Tensor& t : parts) record = record || t.requires_grad();
  if (record) {
    result->requires_grad = true;
    TapeNode node{OpKind::kConcat, {}, result,
                  [offsets](const TapeNode& n) {
                    for (std::size_t i = 0; i < n.parents.size(); ++i) {
                      const auto& p = n.parents[i];
                      if (!wants(p)) continue;
                      K().axpy(p->data.size(), 1.0,
                               n.output->grad.data() + offsets[i], p->grad.data());
                    }
                  }};
    for (const Tensor& t : parts) node.parents.push_back(t.impl());
    Tape::current().record(std::move(node));
  }
  return Tensor(std::move(result));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return emit(OpKind::kReshape, std::move(shape), std::move(out), {&x},
              [](const TapeNode& node) {
                K().axpy(node.output->grad.size(), 1.0, node.output->grad.data(),
                         node.parents[0]->grad.data());
              });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  return emit(OpKind::kTranspose, {n, m}, transpose_copy(x.data().data(), m, n),
              {&x}, [m, n](const TapeNode& node) {
                const double* g = node.output->grad.data();
                double* gx = node.parents[0]->grad.data();
                for (std::size_t r = 0; r < m; ++r)
                  for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[c * m + r];
              });
}

Tensor select(const Tensor& x, std::size_t index) {
  if (index >= x.numel())
    throw DimensionError("select: index " + std::to_string(index) +
                         " out of range for " + shape_str(x.shape()));
  return emit(OpKind::kSelect, {1}, {x[index]}, {&x},
              [index](const TapeNode& node) {
                node.parents[0]->grad[index] += node.output->grad[0];
              });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t classes = logits.shape().back();
  const std::size_t batch = logits.numel() / classes;
  if (logits.rank() > 2 || labels.size() != batch)
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
  std::vector<double> probs(logits.numel());
  double loss = 0.0;
  std::vector<int> y(labels.begin(), labels.end());
  for (std::size_t b = 0; b < batch; ++b) {
    if (y[b] < 0 || static_cast<std::size_t>(y[b]) >= classes)
      throw ContractError("cross_entropy: label " + std::to_string(y[b]) +
                          " out of range");
    const double* z = logits.data().data() + b * classes;
    const double mx = *std::max_element(z, z + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(z[c] - mx);
    const double lse = mx + std::log(s);
    loss += lse - z[y[b]];
    for (std::size_t c = 0; c < classes; ++c)
      probs[b * classes + c] = std::exp(z[c] - lse);
  }
  loss /= static_cast<double>(batch);
  return emit(OpKind::kCrossEntropy, {1}, {loss}, {&logits},
              [probs = std::move(probs), y = std::move(y), batch,
               classes](const TapeNode& node) {
                const double g = node.output->grad[0] / static_cast<double>(batch);
                double* gx = node.parents[0]->grad.data();
                for (std::size_t b = 0; b < batch; ++b)
                  for (std::size_t c = 0; c < classes; ++c)
                    gx[b * classes + c] +=
                        g * (probs[b * classes + c] -
                             (static_cast<int>(c) == y[b] ? 1.0 : 0.0));
              });
}

Tensor sum(const Tensor& x) {
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  return emit(OpKind::kSum, {1}, {s}, {&x}, [](const TapeNode& node) {
    const double g = node.output->grad[0];
    for (double& v : node.parents[0]->grad) v += g;
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0) / n;
  return emit(OpKind::kMean, {1}, {s}, {&x}, [n](const TapeNode& node) {
    const double g = node.output->grad[0] / n;
    for (double& v : node.parents[0]->grad) v += g;
  });
}

}  // namespace hfmf
