#include "recot/autodiff.hpp"

#include <atomic>

#include "recot/errors.hpp"

namespace recot {

namespace {
std::atomic<bool> g_fault_injection{false};
}  // namespace

void set_gradient_fault_injection(bool enabled) { g_fault_injection.store(enabled); }
bool gradient_fault_injection() { return g_fault_injection.load(); }

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("value() on an unbound Var");
  return tape_->value(id_);
}

const Tensor& Var::grad() const {
  if (!tape_) throw UsageError("grad() on an unbound Var");
  return tape_->grad(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw UsageError("op input belongs to a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::ensure_grad(std::size_t id) {
  Node& node = nodes_.at(id);
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

// Unreached nodes report a zero gradient of the right shape.
const Tensor& Tape::grad(std::size_t id) { return ensure_grad(id); }

void Tape::backward(Var loss, const std::function<void(std::size_t)>& on_visit) {
  if (loss.tape() != this) throw UsageError("backward: loss belongs to a different tape");
  if (nodes_[loss.id()].value.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_string(nodes_[loss.id()].value.shape()));
  }
  if (backward_done_) throw UsageError("backward already ran on this tape");
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;

  ensure_grad(loss.id()).fill(1.0);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || !node.has_grad) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      in_grads.push_back(nodes_[in].requires_grad ? &ensure_grad(in) : nullptr);
    }
    if (on_visit) on_visit(id);
    node.backward(BackwardContext{node.grad, node.value, in_values, in_grads});
  }
}

}  // namespace recot

#include "recot/binder.hpp"

namespace recot {

Var ParamBinder::operator()(const Tensor& parameter) {
  const auto it = vars_.find(&parameter);
  if (it != vars_.end()) return it->second;
  Var v = trainable_ ? tape_.leaf(parameter) : tape_.constant(parameter);
  vars_.emplace(&parameter, v);
  return v;
}

Tensor ParamBinder::grad(const Tensor& parameter) {
  const auto it = vars_.find(&parameter);
  if (it == vars_.end()) return Tensor(parameter.shape(), 0.0);
  return it->second.grad();
}

}  // namespace recot
