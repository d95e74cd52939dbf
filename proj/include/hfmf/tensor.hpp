#pragma once
// Dense row-major float64 tensors with dynamic-tape reverse-mode autodiff.
//
// A Tensor is a cheap shared handle. Operations whose inputs require grad (and
// while grad mode is on) append a TapeNode to the calling thread's tape;
// backward(loss) walks that tape in reverse, accumulates gradients into every
// reachable tensor and clears the tape.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hfmf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access for initialisation and optimiser updates. Must not be
  /// used on a tensor that is part of a pending tape.
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  /// Gradient buffer; empty span when no gradient has been allocated.
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy of the values, detached from any tape.
  Tensor detach() const;

  const detail::TensorImpl* id() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Tape

enum class OpKind {
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRowBias,
  kRelu,
  kGelu,
  kSigmoid,
  kSoftmaxRows,
  kLayerNorm,
  kConv2d,
  kDepthwiseConv2d,
  kMeanRows,
  kGlobalAvgPool,
  kConcat,
  kReshape,
  kTranspose,
  kCrossEntropy,
  kSum,
  kMean,
  kSelect,
};

const char* op_name(OpKind kind);

struct TapeNode {
  OpKind op_kind;
  std::vector<std::shared_ptr<detail::TensorImpl>> parents;
  std::shared_ptr<detail::TensorImpl> output;
  /// Backward rule; saved forward values live in the closure. Reads
  /// output->grad and accumulates into each parent that requires grad.
  std::function<void(const TapeNode&)> backward;
};

class Tape {
 public:
  /// The calling thread's tape.
  static Tape& current();

  void record(TapeNode node) { nodes_.push_back(std::move(node)); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<TapeNode> nodes_;
};

/// Whether new operations are recorded on the current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse pass from a scalar loss. Populates grad on every requires_grad
/// tensor reachable from `loss` and clears the current thread's tape.
void backward(const Tensor& loss);

namespace debug {
/// While alive, every relu forward on this thread appends one byte per element
/// (1 when the input is positive). Finite-difference checks use it to detect
/// perturbations that cross a kink.
class ActivationPatternRecorder {
 public:
  ActivationPatternRecorder();
  ~ActivationPatternRecorder();
  ActivationPatternRecorder(const ActivationPatternRecorder&) = delete;
  ActivationPatternRecorder& operator=(const ActivationPatternRecorder&) =
      delete;
  const std::vector<unsigned char>& pattern() const { return pattern_; }

 private:
  std::vector<unsigned char> pattern_;
  std::vector<unsigned char>* previous_;
};

std::vector<unsigned char>* active_pattern_sink();
}  // namespace debug

// ---------------------------------------------------------------------------
// Differentiable operations. None of them modifies its inputs.

/// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// x [m x n] (or [n]) plus bias [n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
/// x * weight + bias with weight [k x n]; x may be [k] or [m x k].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Row-wise softmax of a 2-D tensor with max subtraction.
Tensor softmax_rows(const Tensor& x);
/// Per-row normalisation with affine gamma/beta of length n.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps = 1e-5);

/// Cross-correlation of input [C x H x W] with kernel [O x C x kh x kw] and
/// zero padding. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t padding);
/// Per-channel cross-correlation: kernel [C x 1 x kh x kw].
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, std::size_t stride,
                        std::size_t padding);

/// [m x n] -> [n], average over rows.
Tensor mean_rows(const Tensor& x);
/// [C x H x W] -> [C]
Tensor global_avg_pool(const Tensor& x);
/// Concatenate along axis 0; trailing dimensions must agree.
Tensor concat(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);
/// 2-D transpose.
Tensor transpose(const Tensor& x);
/// Element `index` of a flat view, as a scalar.
Tensor select(const Tensor& x, std::size_t index);

/// Mean over samples of -log softmax(logits)[label]; logits [B x C] or [C].
/// Computed as a fused log-softmax + NLL.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace hfmf
