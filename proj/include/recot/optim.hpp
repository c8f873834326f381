#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "recot/tensor.hpp"

namespace recot {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments per parameter plus the number of updates applied.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const std::vector<const Tensor*>& params);
};

// One bias-corrected Adam update in place.
void adam_update(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
                 const AdamConfig& config = {});

std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio);
// Linear warmup from 0 over floor(warmup_ratio * total) steps, then cosine
// decay to 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_ratio);

}  // namespace recot
