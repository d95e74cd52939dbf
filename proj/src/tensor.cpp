#include "hfmf/tensor.hpp"

#include <cmath>
#include <sstream>

#include "hfmf/errors.hpp"

namespace hfmf {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (std::size_t d : shape)
    if (d == 0)
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  check_shape(shape);
  impl_->data.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  check_shape(shape);
  if (values.size() != shape_numel(shape))
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  set_requires_grad(requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  if (flag) impl_->ensure_grad();
}

std::span<double> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddRowBias: return "add_row_bias";
    case OpKind::kRelu: return "relu";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kLayerNorm: return "layer_norm_rows";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kDepthwiseConv2d: return "depthwise_conv2d";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kConcat: return "concat";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSelect: return "select";
  }
  return "?";
}

namespace {
thread_local bool t_grad_enabled = true;
thread_local std::vector<unsigned char>* t_pattern_sink = nullptr;
}  // namespace

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : "[]"));
  if (!loss.requires_grad())
    throw ContractError("backward(): loss is not connected to the tape");
  Tape& tape = Tape::current();
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const TapeNode& node = *it;
    if (node.output->grad.size() != node.output->data.size()) continue;
    for (const auto& p : node.parents)
      if (p->requires_grad) p->ensure_grad();
    node.backward(node);
  }
  tape.clear();
}

namespace debug {

ActivationPatternRecorder::ActivationPatternRecorder()
    : previous_(t_pattern_sink) {
  t_pattern_sink = &pattern_;
}

ActivationPatternRecorder::~ActivationPatternRecorder() {
  t_pattern_sink = previous_;
}

std::vector<unsigned char>* active_pattern_sink() { return t_pattern_sink; }

}  // namespace debug

}  // namespace hfmf
