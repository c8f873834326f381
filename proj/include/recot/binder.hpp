#pragma once

#include <unordered_map>

#include "recot/autodiff.hpp"

namespace recot {

// Registers parameter tensors on a tape on first use, as trainable leaves or
// as constants. Lets model code name its parameters directly while training
// code reads gradients back by the same tensor.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

  Var operator()(const Tensor& parameter);
  // Gradient of a bound parameter; zero-filled if it was never used.
  Tensor grad(const Tensor& parameter);
  bool bound(const Tensor& parameter) const { return vars_.count(&parameter) > 0; }
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  bool trainable_;
  std::unordered_map<const Tensor*, Var> vars_;
};

}  // namespace recot
