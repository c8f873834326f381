#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "recot/autodiff.hpp"
#include "recot/errors.hpp"

namespace recot {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

Tape& tape_of(Var v) {
  if (!v.valid()) throw UsageError("op applied to an unbound Var");
  return *v.tape();
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape without_last(const Shape& shape) { return Shape(shape.begin(), shape.end() - 1); }

}  // namespace

Var add(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("add", x, y);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return tape_of(a).record(Tensor(x.shape(), std::move(out)), {a, b}, [](const BackwardContext& c) {
    for (Tensor* g : c.input_grads) {
      if (!g) continue;
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += c.grad_out[i];
    }
  });
}

Var sub(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("sub", x, y);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return tape_of(a).record(Tensor(x.shape(), std::move(out)), {a, b}, [](const BackwardContext& c) {
    if (Tensor* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += c.grad_out[i];
    }
    if (Tensor* g = c.input_grads[1]) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= c.grad_out[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("mul", x, y);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return tape_of(a).record(Tensor(x.shape(), std::move(out)), {a, b}, [](const BackwardContext& c) {
    const Tensor& x = *c.inputs[0];
    const Tensor& y = *c.inputs[1];
    if (Tensor* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += c.grad_out[i] * y[i];
    }
    if (Tensor* g = c.input_grads[1]) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += c.grad_out[i] * x[i];
    }
  });
}

Var scale(Var a, double factor) {
  const Tensor& x = a.value();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return tape_of(a).record(Tensor(x.shape(), std::move(out)), {a}, [factor](const BackwardContext& c) {
    Tensor& g = *c.input_grads[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += c.grad_out[i] * factor;
  });
}

Var add_lastdim(Var x, Var bias) {
  const Tensor& v = x.value();
  const Tensor& b = bias.value();
  require_rank("add_lastdim bias", b, 1);
  if (v.rank() == 0 || v.shape().back() != b.dim(0)) {
    throw DimensionError("add_lastdim: bias " + shape_string(b.shape()) + " does not match last dim of " +
                         shape_string(v.shape()));
  }
  const std::size_t d = b.dim(0);
  std::vector<double> out(v.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] + b[i % d];
  return tape_of(x).record(Tensor(v.shape(), std::move(out)), {x, bias}, [d](const BackwardContext& c) {
    if (Tensor* g = c.input_grads[0]) {
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += c.grad_out[i];
    }
    if (Tensor* g = c.input_grads[1]) {
      for (std::size_t i = 0; i < c.grad_out.numel(); ++i) (*g)[i % d] += c.grad_out[i];
    }
  });
}

namespace {

// out[m x n] += a[m x k] . b[k x n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

// out[m x k] += g[m x n] . b[k x n]^T
void gemm_nt(const double* g, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* grow = g + i * n;
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out[i * k + p] += acc;
    }
  }
}

// out[k x n] += a[m x k]^T . g[m x n]
void gemm_tn(const double* a, const double* g, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(x.shape()) + " by " + shape_string(y.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(x.values().data(), y.values().data(), out.data(), m, k, n);
  return tape_of(a).record(Tensor({m, n}, std::move(out)), {a, b}, [m, k, n](const BackwardContext& c) {
    if (Tensor* g = c.input_grads[0]) {
      gemm_nt(c.grad_out.values().data(), c.inputs[1]->values().data(), g->values().data(), m, k, n);
    }
    if (Tensor* g = c.input_grads[1]) {
      gemm_tn(c.inputs[0]->values().data(), c.grad_out.values().data(), g->values().data(), m, k, n);
    }
  });
}

Var batched_matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 3 || y.rank() != 3 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(1)) {
    throw DimensionError("batched_matmul: cannot multiply " + shape_string(x.shape()) + " by " +
                         shape_string(y.shape()));
  }
  const std::size_t batch = x.dim(0), m = x.dim(1), k = x.dim(2), n = y.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    gemm_nn(x.values().data() + bi * m * k, y.values().data() + bi * k * n, out.data() + bi * m * n, m, k, n);
  }
  return tape_of(a).record(
      Tensor({batch, m, n}, std::move(out)), {a, b}, [batch, m, k, n](const BackwardContext& c) {
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const double* go = c.grad_out.values().data() + bi * m * n;
          if (Tensor* g = c.input_grads[0]) {
            gemm_nt(go, c.inputs[1]->values().data() + bi * k * n, g->values().data() + bi * m * k, m, k, n);
          }
          if (Tensor* g = c.input_grads[1]) {
            gemm_tn(c.inputs[0]->values().data() + bi * m * k, go, g->values().data() + bi * k * n, m, k, n);
          }
        }
      });
}

Var reshape(Var x, Shape shape) {
  const Tensor& v = x.value();
  Tensor out = v.reshaped(std::move(shape));
  return tape_of(x).record(std::move(out), {x}, [](const BackwardContext& c) {
    Tensor& g = *c.input_grads[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += c.grad_out[i];
  });
}

Var permute(Var x, std::vector<std::size_t> perm) {
  const Tensor& v = x.value();
  const std::size_t rank = v.rank();
  if (perm.size() != rank) throw DimensionError("permute: permutation rank mismatch for " + shape_string(v.shape()));
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = v.dim(perm[i]);
  const auto in_strides = strides_of(v.shape());
  // source offset for each output element
  std::vector<std::size_t> gather(v.numel());
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t flat = 0; flat < gather.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += index[i] * in_strides[perm[i]];
    gather[flat] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++index[i] < out_shape[i]) break;
      index[i] = 0;
    }
  }
  std::vector<double> out(v.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[gather[i]];
  return tape_of(x).record(Tensor(out_shape, std::move(out)), {x},
                           [gather = std::move(gather)](const BackwardContext& c) {
                             Tensor& g = *c.input_grads[0];
                             for (std::size_t i = 0; i < gather.size(); ++i) g[gather[i]] += c.grad_out[i];
                           });
}

Var softmax_lastdim(Var x) {
  const Tensor& v = x.value();
  if (v.rank() == 0) throw DimensionError("softmax_lastdim: needs rank >= 1");
  const std::size_t d = v.shape().back();
  const std::size_t rows = v.numel() / d;
  std::vector<double> out(v.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.values().data() + r * d;
    double* o = out.data() + r * d;
    const double peak = *std::max_element(in, in + d);
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - peak);
      total += o[j];
    }
    for (std::size_t j = 0; j < d; ++j) o[j] /= total;
  }
  return tape_of(x).record(Tensor(v.shape(), std::move(out)), {x}, [d, rows](const BackwardContext& c) {
    Tensor& g = *c.input_grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = c.out.values().data() + r * d;
      const double* gy = c.grad_out.values().data() + r * d;
      double inner = 0.0;
      for (std::size_t j = 0; j < d; ++j) inner += gy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (gy[j] - inner);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& v = x.value();
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  if (v.rank() == 0) throw DimensionError("layer_norm: needs rank >= 1");
  const std::size_t d = v.shape().back();
  if (gm.shape() != Shape{d} || bt.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma/beta " + shape_string(gm.shape()) + "/" + shape_string(bt.shape()) +
                         " do not match last dim of " + shape_string(v.shape()));
  }
  const std::size_t rows = v.numel() / d;
  std::vector<double> out(v.numel());
  std::vector<double> normed(v.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.values().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      normed[r * d + j] = (in[j] - mu) * inv_std[r];
      out[r * d + j] = gm[j] * normed[r * d + j] + bt[j];
    }
  }
  const double gamma_fault = gradient_fault_injection() ? 1.01 : 1.0;
  return tape_of(x).record(
      Tensor(v.shape(), std::move(out)), {x, gamma, beta},
      [d, rows, gamma_fault, normed = std::move(normed), inv_std = std::move(inv_std)](const BackwardContext& c) {
        const Tensor& gm = *c.inputs[1];
        Tensor* gx = c.input_grads[0];
        Tensor* gg = c.input_grads[1];
        Tensor* gb = c.input_grads[2];
        std::vector<double> gnorm(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gy = c.grad_out.values().data() + r * d;
          const double* xh = normed.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) (*gg)[j] += gamma_fault * gy[j] * xh[j];
            if (gb) (*gb)[j] += gy[j];
          }
          if (!gx) continue;
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            gnorm[j] = gy[j] * gm[j];
            mean_g += gnorm[j];
            mean_gx += gnorm[j] * xh[j];
          }
          mean_g /= static_cast<double>(d);
          mean_gx /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            (*gx)[r * d + j] += inv_std[r] * (gnorm[j] - mean_g - xh[j] * mean_gx);
          }
        }
      });
}

Var gelu(Var x) {
  const Tensor& v = x.value();
  std::vector<double> out(v.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] / std::numbers::sqrt2));
  return tape_of(x).record(Tensor(v.shape(), std::move(out)), {x}, [](const BackwardContext& c) {
    const Tensor& v = *c.inputs[0];
    Tensor& g = *c.input_grads[0];
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(v[i] / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v[i] * v[i]);
      g[i] += c.grad_out[i] * (cdf + v[i] * pdf);
    }
  });
}

Var softplus(Var x) {
  const Tensor& v = x.value();
  std::vector<double> out(v.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(v[i], 0.0) + std::log1p(std::exp(-std::abs(v[i])));
  }
  return tape_of(x).record(Tensor(v.shape(), std::move(out)), {x}, [](const BackwardContext& c) {
    const Tensor& v = *c.inputs[0];
    Tensor& g = *c.input_grads[0];
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double sig = v[i] >= 0 ? 1.0 / (1.0 + std::exp(-v[i])) : std::exp(v[i]) / (1.0 + std::exp(v[i]));
      g[i] += c.grad_out[i] * sig;
    }
  });
}

Var conv3d(Var x, Var kernel, std::array<std::size_t, 3> stride) {
  const Tensor& v = x.value();
  const Tensor& k = kernel.value();
  require_rank("conv3d input", v, 4);
  require_rank("conv3d kernel", k, 5);
  const std::size_t cin = v.dim(3), cout = k.dim(4);
  if (k.dim(3) != cin) {
    throw DimensionError("conv3d: kernel " + shape_string(k.shape()) + " input channels do not match " +
                         shape_string(v.shape()));
  }
  std::array<std::size_t, 3> in_ext{v.dim(0), v.dim(1), v.dim(2)};
  std::array<std::size_t, 3> k_ext{k.dim(0), k.dim(1), k.dim(2)};
  std::array<std::size_t, 3> out_ext{};
  for (int a = 0; a < 3; ++a) {
    if (stride[a] == 0) throw DimensionError("conv3d: stride must be >= 1");
    if (k_ext[a] > in_ext[a]) {
      throw DimensionError("conv3d: kernel " + shape_string(k.shape()) + " larger than input " +
                           shape_string(v.shape()));
    }
    out_ext[a] = (in_ext[a] - k_ext[a]) / stride[a] + 1;
  }
  const Shape out_shape{out_ext[0], out_ext[1], out_ext[2], cout};
  std::vector<double> out(shape_numel(out_shape), 0.0);

  // Visits every (output position, kernel tap) pair with flat offsets.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t ot = 0; ot < out_ext[0]; ++ot)
      for (std::size_t oh = 0; oh < out_ext[1]; ++oh)
        for (std::size_t ow = 0; ow < out_ext[2]; ++ow) {
          const std::size_t out_off = ((ot * out_ext[1] + oh) * out_ext[2] + ow) * cout;
          for (std::size_t kt = 0; kt < k_ext[0]; ++kt)
            for (std::size_t kh = 0; kh < k_ext[1]; ++kh)
              for (std::size_t kw = 0; kw < k_ext[2]; ++kw) {
                const std::size_t it = ot * stride[0] + kt, ih = oh * stride[1] + kh, iw = ow * stride[2] + kw;
                const std::size_t in_off = ((it * in_ext[1] + ih) * in_ext[2] + iw) * cin;
                const std::size_t k_off = ((kt * k_ext[1] + kh) * k_ext[2] + kw) * cin * cout;
                fn(out_off, in_off, k_off);
              }
        }
  };

  for_each_tap([&](std::size_t out_off, std::size_t in_off, std::size_t k_off) {
    gemm_nn(v.values().data() + in_off, k.values().data() + k_off, out.data() + out_off, 1, cin, cout);
  });

  return tape_of(x).record(Tensor(out_shape, std::move(out)), {x, kernel},
                           [for_each_tap, cin, cout](const BackwardContext& c) {
                             Tensor* gx = c.input_grads[0];
                             Tensor* gk = c.input_grads[1];
                             const double* go = c.grad_out.values().data();
                             for_each_tap([&](std::size_t out_off, std::size_t in_off, std::size_t k_off) {
                               if (gx) {
                                 gemm_nt(go + out_off, c.inputs[1]->values().data() + k_off,
                                         gx->values().data() + in_off, 1, cin, cout);
                               }
                               if (gk) {
                                 gemm_tn(c.inputs[0]->values().data() + in_off, go + out_off,
                                         gk->values().data() + k_off, 1, cin, cout);
                               }
                             });
                           });
}

Var sum(Var x) {
  const Tensor& v = x.value();
  double total = 0.0;
  for (double value : v.values()) total += value;
  return tape_of(x).record(Tensor::scalar(total), {x}, [](const BackwardContext& c) {
    Tensor& g = *c.input_grads[0];
    const double go = c.grad_out[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += go;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var mse(Var pred, Var target) {
  const Tensor& p = pred.value();
  const Tensor& t = target.value();
  require_same_shape("mse", p, t);
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
  const double n = static_cast<double>(p.numel());
  return tape_of(pred).record(Tensor::scalar(total / n), {pred, target}, [n](const BackwardContext& c) {
    const Tensor& p = *c.inputs[0];
    const Tensor& t = *c.inputs[1];
    const double go = c.grad_out[0];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double d = 2.0 * (p[i] - t[i]) / n * go;
      if (c.input_grads[0]) (*c.input_grads[0])[i] += d;
      if (c.input_grads[1]) (*c.input_grads[1])[i] -= d;
    }
  });
}

Var cross_entropy_lastdim(Var logits, Var target) {
  const Tensor& l = logits.value();
  const Tensor& t = target.value();
  require_same_shape("cross_entropy_lastdim", l, t);
  if (l.rank() == 0) throw DimensionError("cross_entropy_lastdim: needs rank >= 1");
  const std::size_t d = l.shape().back();
  const std::size_t rows = l.numel() / d;
  std::vector<double> log_probs(l.numel());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = l.values().data() + r * d;
    const double peak = *std::max_element(in, in + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(in[j] - peak);
    const double log_z = peak + std::log(z);
    for (std::size_t j = 0; j < d; ++j) {
      log_probs[r * d + j] = in[j] - log_z;
      total -= t[r * d + j] * log_probs[r * d + j];
    }
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  return tape_of(logits).record(
      Tensor::scalar(total * inv_rows), {logits, target},
      [d, rows, inv_rows, log_probs = std::move(log_probs)](const BackwardContext& c) {
        const Tensor& t = *c.inputs[1];
        const double go = c.grad_out[0] * inv_rows;
        for (std::size_t r = 0; r < rows; ++r) {
          double mass = 0.0;
          for (std::size_t j = 0; j < d; ++j) mass += t[r * d + j];
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t i = r * d + j;
            if (c.input_grads[0]) (*c.input_grads[0])[i] += go * (std::exp(log_probs[i]) * mass - t[i]);
            if (c.input_grads[1]) (*c.input_grads[1])[i] -= go * log_probs[i];
          }
        }
      });
}

Var select_frames(Var x, std::vector<std::size_t> indices) {
  const Tensor& v = x.value();
  if (v.rank() == 0) throw DimensionError("select_frames: needs rank >= 1");
  if (indices.empty()) throw DimensionError("select_frames: empty index list");
  const std::size_t frames = v.dim(0);
  const std::size_t slab = v.numel() / frames;
  for (std::size_t i : indices) {
    if (i >= frames) throw DimensionError("select_frames: index " + std::to_string(i) + " out of range");
  }
  Shape out_shape = v.shape();
  out_shape[0] = indices.size();
  std::vector<double> out(indices.size() * slab);
  for (std::size_t o = 0; o < indices.size(); ++o) {
    std::copy_n(v.values().data() + indices[o] * slab, slab, out.data() + o * slab);
  }
  return tape_of(x).record(Tensor(out_shape, std::move(out)), {x},
                           [slab, indices = std::move(indices)](const BackwardContext& c) {
                             Tensor& g = *c.input_grads[0];
                             for (std::size_t o = 0; o < indices.size(); ++o) {
                               for (std::size_t j = 0; j < slab; ++j) g[indices[o] * slab + j] += c.grad_out[o * slab + j];
                             }
                           });
}

Var shift_prev(Var x) {
  const Tensor& v = x.value();
  if (v.rank() == 0) throw DimensionError("shift_prev: needs rank >= 1");
  const std::size_t slab = v.numel() / v.dim(0);
  std::vector<double> out(v.numel(), 0.0);
  std::copy_n(v.values().data(), v.numel() - slab, out.data() + slab);
  return tape_of(x).record(Tensor(v.shape(), std::move(out)), {x}, [slab](const BackwardContext& c) {
    Tensor& g = *c.input_grads[0];
    for (std::size_t i = 0; i + slab < g.numel(); ++i) g[i] += c.grad_out[i + slab];
  });
}

Var mean_axis(Var x, std::size_t axis) {
  const Tensor& v = x.value();
  if (axis >= v.rank()) throw DimensionError("mean_axis: axis out of range for " + shape_string(v.shape()));
  const AxisSplit s = split_at(v.shape(), axis);
  Shape out_shape = v.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += v[(o * s.extent + e) * s.inner + i];
  for (double& value : out) value *= inv;
  return tape_of(x).record(Tensor(out_shape, std::move(out)), {x}, [s, inv](const BackwardContext& c) {
    Tensor& g = *c.input_grads[0];
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + e) * s.inner + i] += inv * c.grad_out[o * s.inner + i];
  });
}

Var dot_lastdim(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("dot_lastdim", x, y);
  if (x.rank() < 2) throw DimensionError("dot_lastdim: needs rank >= 2, got " + shape_string(x.shape()));
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r] += x[r * d + j] * y[r * d + j];
  return tape_of(a).record(Tensor(without_last(x.shape()), std::move(out)), {a, b}, [d, rows](const BackwardContext& c) {
    const Tensor& x = *c.inputs[0];
    const Tensor& y = *c.inputs[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double go = c.grad_out[r];
      for (std::size_t j = 0; j < d; ++j) {
        if (c.input_grads[0]) (*c.input_grads[0])[r * d + j] += go * y[r * d + j];
        if (c.input_grads[1]) (*c.input_grads[1])[r * d + j] += go * x[r * d + j];
      }
    }
  });
}

Var mask_fill(Var x, std::span<const std::uint8_t> mask, Var fill) {
  const Tensor& v = x.value();
  const Tensor& f = fill.value();
  require_rank("mask_fill fill", f, 1);
  if (v.rank() == 0 || v.shape().back() != f.dim(0)) {
    throw DimensionError("mask_fill: fill " + shape_string(f.shape()) + " does not match last dim of " +
                         shape_string(v.shape()));
  }
  const std::size_t d = f.dim(0);
  const std::size_t rows = v.numel() / d;
  if (mask.size() != rows) {
    throw DimensionError("mask_fill: mask has " + std::to_string(mask.size()) + " entries, tensor " +
                         shape_string(v.shape()) + " has " + std::to_string(rows) + " rows");
  }
  std::vector<double> out(v.values().begin(), v.values().end());
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask[r]) std::copy_n(f.values().data(), d, out.data() + r * d);
  }
  return tape_of(x).record(Tensor(v.shape(), std::move(out)), {x, fill},
                           [d, rows, rows_mask = std::vector<std::uint8_t>(mask.begin(), mask.end())](
                               const BackwardContext& c) {
                             for (std::size_t r = 0; r < rows; ++r) {
                               Tensor* g = rows_mask[r] ? c.input_grads[1] : c.input_grads[0];
                               if (!g) continue;
                               const std::size_t base = rows_mask[r] ? 0 : r * d;
                               for (std::size_t j = 0; j < d; ++j) (*g)[base + j] += c.grad_out[r * d + j];
                             }
                           });
}

}  // namespace recot
