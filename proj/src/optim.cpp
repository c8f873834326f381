#include "recot/optim.hpp"

#include <cmath>
#include <numbers>

#include "recot/errors.hpp"

namespace recot {

AdamState AdamState::zeros_like(const std::vector<const Tensor*>& params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape(), 0.0);
    s.v.emplace_back(p->shape(), 0.0);
  }
  return s;
}

void adam_update(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
                 const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw DimensionError("adam_update: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, " + std::to_string(state.m.size()) + " moments");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape()) {
      throw DimensionError("adam_update: shape mismatch for parameter " + std::to_string(k) + " " +
                           shape_string(p.shape()) + " vs grad " + shape_string(g.shape()));
    }
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio) {
  return static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(total_steps)));
}

double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_ratio) {
  if (step > total_steps) {
    throw UsageError("lr_at: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
  }
  const std::size_t warm = warmup_steps(total_steps, warmup_ratio);
  if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (total_steps == warm) return base_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace recot
