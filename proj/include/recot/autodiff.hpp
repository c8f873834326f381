#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "recot/tensor.hpp"

namespace recot {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning Tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// What a backward closure sees: its output gradient, the forward values and
// the gradient buffers of inputs that require one (nullptr otherwise).
struct BackwardContext {
  const Tensor& grad_out;
  const Tensor& out;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Ordered record of executed operations. backward() replays it in reverse,
// visiting each recorded op at most once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Appends an op node. `backward` is dropped when no input requires grad.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node that
  // requires one. `on_visit` receives the id of each op node as it runs.
  void backward(Var loss, const std::function<void(std::size_t)>& on_visit = {});

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Tensor& ensure_grad(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Negative-control switch for verification tooling: when on, layer_norm's
// gamma gradient is deliberately scaled wrong.
void set_gradient_fault_injection(bool enabled);
bool gradient_fault_injection();

// ---- differentiable operations -------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// x[..., D] + bias[D]
Var add_lastdim(Var x, Var bias);

// a[m x k] . b[k x n]
Var matmul(Var a, Var b);
// a[B x m x k] . b[B x k x n]
Var batched_matmul(Var a, Var b);

Var reshape(Var x, Shape shape);
// out.shape[i] = x.shape[perm[i]]
Var permute(Var x, std::vector<std::size_t> perm);

Var softmax_lastdim(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var x);
Var softplus(Var x);

// Valid strided convolution. x[T x H x W x Cin], kernel[kt x kh x kw x Cin x Cout].
Var conv3d(Var x, Var kernel, std::array<std::size_t, 3> stride);

Var sum(Var x);
Var mean(Var x);
// Scalar mean of squared differences.
Var mse(Var pred, Var target);
// Mean over leading rows of -sum(target * log_softmax(logits)) along the last dim.
Var cross_entropy_lastdim(Var logits, Var target);

// Gathers slices along axis 0 (indices may repeat).
Var select_frames(Var x, std::vector<std::size_t> indices);
// out[0] = 0, out[t] = x[t-1] along axis 0.
Var shift_prev(Var x);
// Mean over `axis`, which is removed from the shape.
Var mean_axis(Var x, std::size_t axis);
// Contraction over the last dim: [..., D] x [..., D] -> [...].
Var dot_lastdim(Var a, Var b);
// Rows (last-dim slices) where mask[row] != 0 are replaced by fill[D].
Var mask_fill(Var x, std::span<const std::uint8_t> mask, Var fill);

}  // namespace recot
