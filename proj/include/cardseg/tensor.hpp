#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cardseg {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown when tensor shapes are incompatible with an operation.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

/// Dense N-d array of doubles, row-major, shared-ownership value type.
/// Image tensors use [batch, channels, height, width].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return impl_->numel(); }
  bool requires_grad() const { return impl_->requires_grad; }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad() { return impl_->grad; }
  const std::vector<double>& grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() { impl_->grad.clear(); }

  double item() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Records forward operations so a single reverse sweep can propagate
/// gradients. Operations appear in creation order, so inputs of every node
/// precede it on the tape.
class Tape {
 public:
  struct Node {
    std::shared_ptr<TensorImpl> out;
    std::function<void()> backward;
  };

  void record(const Tensor& out, std::function<void()> backward) {
    nodes_.push_back({out.impl(), std::move(backward)});
  }

  /// Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse. `loss` must be
  /// a scalar produced on this tape.
  void backward(const Tensor& loss);

  size_t node_count() const { return nodes_.size(); }
  size_t backward_visits() const { return backward_visits_; }

 private:
  std::vector<Node> nodes_;
  size_t backward_visits_ = 0;
};

// --- differentiable operations -------------------------------------------
// `tape == nullptr` runs forward-only (inference).

/// Cross-correlation (no kernel flip). input [B,Cin,H,W], weight
/// [Cout,Cin,kh,kw], bias [Cout]. Output spatial dims follow
/// (H + 2*padding - kh) / stride + 1.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weight,
              const Tensor& bias, int stride = 1, int padding = 0);

/// Adjoint of a strided conv2d. weight [Cin,Cout,kh,kw]; output spatial dims
/// are (H-1)*stride + kh. With the default 2x2/stride-2 decoder kernel this
/// exactly doubles H and W.
Tensor transposed_conv2d(Tape* tape, const Tensor& input, const Tensor& weight,
                         int stride = 2);

/// 2x2/stride-2 max pooling; H and W must be even. Backward routes each
/// window's gradient to the first-encountered argmax in row-major order.
Tensor maxpool2d(Tape* tape, const Tensor& input);

Tensor relu(Tape* tape, const Tensor& input);

/// Doubles H and W by pixel replication (the nearest-upsample decoder mode).
Tensor nearest_upsample2x(Tape* tape, const Tensor& input);

/// Stacks channels of `a` before channels of `b`; B,H,W must match.
Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b);

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);

/// Per-pixel softmax over the channel dimension, max-subtracted for
/// stability. Requires C >= 2.
Tensor softmax_channels(Tape* tape, const Tensor& logits);

/// Sum of all elements, as a scalar tensor.
Tensor sum_all(Tape* tape, const Tensor& input);

// --- optimizer -------------------------------------------------------------

/// A trainable tensor plus its Adam state.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  int64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string name, Tensor value);
};

/// Standard Adam with bias correction. Every parameter must carry a
/// populated gradient; gradients are zeroed after the update.
void adam_step(std::vector<Parameter*>& params, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

}  // namespace cardseg
