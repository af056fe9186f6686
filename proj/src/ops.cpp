#include "ckan/ops.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ckan/autograd.h"
#include "ckan/errors.h"

namespace ckan {

using detail::grad_target;
using detail::ImplPtr;
using detail::make_result;

namespace {

void require_defined(const Tensor& t, std::string_view op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined operand");
}

// Shared body for unary maps. `deriv(x)` is d f / d x.
template <typename F, typename D>
Tensor unary(std::string_view op, const Tensor& a, F f, D deriv) {
  require_defined(a, op);
  const auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(op, a.shape(), std::move(out), {a},
                     [deriv](std::span<const double> g, std::span<const ImplPtr> ops) {
                       auto ga = grad_target(ops[0]);
                       if (ga.empty()) return;
                       const auto& x = ops[0]->data;
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i]);
                     });
}

enum class BinaryKind { add, sub, mul };

Tensor binary(std::string_view op, BinaryKind kind, const Tensor& a, const Tensor& b) {
  require_defined(a, op);
  require_defined(b, op);
  const bool b_scalar = b.numel() == 1 && a.shape() != b.shape();
  if (!b_scalar && a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const auto x = a.values();
  const auto y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double yv = b_scalar ? y[0] : y[i];
    switch (kind) {
      case BinaryKind::add: out[i] = x[i] + yv; break;
      case BinaryKind::sub: out[i] = x[i] - yv; break;
      case BinaryKind::mul: out[i] = x[i] * yv; break;
    }
  }
  return make_result(
      op, a.shape(), std::move(out), {a, b},
      [kind, b_scalar](std::span<const double> g, std::span<const ImplPtr> ops) {
        auto ga = grad_target(ops[0]);
        auto gb = grad_target(ops[1]);
        const auto& xa = ops[0]->data;
        const auto& xb = ops[1]->data;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t j = b_scalar ? 0 : i;
          switch (kind) {
            case BinaryKind::add:
              if (!ga.empty()) ga[i] += g[i];
              if (!gb.empty()) gb[j] += g[i];
              break;
            case BinaryKind::sub:
              if (!ga.empty()) ga[i] += g[i];
              if (!gb.empty()) gb[j] -= g[i];
              break;
            case BinaryKind::mul:
              if (!ga.empty()) ga[i] += g[i] * xb[j];
              if (!gb.empty()) gb[j] += g[i] * xa[i];
              break;
          }
        }
      });
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinaryKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinaryKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinaryKind::mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return factor * x; },
               [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary("add_scalar", a, [value](double x) { return x + value; },
               [](double) { return 1.0; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](double x) { return std::fabs(x); },
               [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, logistic, [](double x) {
    const double s = logistic(x);
    return s * (1.0 - s);
  });
}

Tensor silu(const Tensor& a) {
  return unary("silu", a, [](double x) { return x * logistic(x); },
               [](double x) {
                 const double s = logistic(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double x) {
                 const double t = std::tanh(x);
                 return 1.0 - t * t;
               });
}

Tensor leaky_relu(const Tensor& a, double negative_slope) {
  return unary("leaky_relu", a,
               [negative_slope](double x) { return x >= 0 ? x : negative_slope * x; },
               [negative_slope](double x) { return x >= 0 ? 1.0 : negative_slope; });
}

Tensor softplus(const Tensor& a) {
  return unary("softplus", a,
               [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
               logistic);
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const auto v = a.values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result("sum", Shape{}, {total}, {a},
                     [](std::span<const double> g, std::span<const ImplPtr> ops) {
                       auto ga = grad_target(ops[0]);
                       for (auto& x : ga) x += g[0];
                     });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  const auto v = a.values();
  const double n = static_cast<double>(v.size());
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result("mean", Shape{}, {total / n}, {a},
                     [n](std::span<const double> g, std::span<const ImplPtr> ops) {
                       auto ga = grad_target(ops[0]);
                       const double share = g[0] / n;
                       for (auto& x : ga) x += share;
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  detail::gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data(), false);
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [m, n, k](std::span<const double> g, std::span<const ImplPtr> ops) {
                       auto ga = grad_target(ops[0]);
                       auto gb = grad_target(ops[1]);
                       if (!ga.empty())
                         detail::gemm_nt(m, k, n, g.data(), ops[1]->data.data(), ga.data(), true);
                       if (!gb.empty())
                         detail::gemm_tn(k, n, m, ops[0]->data.data(), g.data(), gb.data(), true);
                     });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw DimensionError("linear: incompatible input " + shape_str(x.shape()) + " and weight " +
                         shape_str(w.shape()));
  }
  const std::size_t n = x.dim(0), d_in = x.dim(1), d_out = w.dim(0);
  std::vector<double> out(n * d_out);
  detail::gemm_nt(n, d_out, d_in, x.values().data(), w.values().data(), out.data(), false);
  return make_result(
      "linear", {n, d_out}, std::move(out), {x, w},
      [n, d_in, d_out](std::span<const double> g, std::span<const ImplPtr> ops) {
        auto gx = grad_target(ops[0]);
        auto gw = grad_target(ops[1]);
        if (!gx.empty())
          detail::gemm_nn(n, d_in, d_out, g.data(), ops[1]->data.data(), gx.data(), true);
        if (!gw.empty())
          detail::gemm_tn(d_out, d_in, n, g.data(), ops[0]->data.data(), gw.data(), true);
      });
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  require_defined(x, "add_row_vector");
  require_defined(v, "add_row_vector");
  if (x.rank() != 2 || v.numel() != x.dim(1)) {
    throw DimensionError("add_row_vector: " + shape_str(x.shape()) + " + " +
                         shape_str(v.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto vv = v.values();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += vv[c];
  return make_result("add_row_vector", x.shape(), std::move(out), {x, v},
                     [n, d](std::span<const double> g, std::span<const ImplPtr> ops) {
                       auto gx = grad_target(ops[0]);
                       auto gv = grad_target(ops[1]);
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t c = 0; c < d; ++c) {
                           if (!gx.empty()) gx[r * d + c] += g[r * d + c];
                           if (!gv.empty()) gv[c] += g[r * d + c];
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {a},
                     [](std::span<const double> g, std::span<const ImplPtr> ops) {
                       auto ga = grad_target(ops[0]);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                     });
}

Tensor permute(const Tensor& a, std::span<const std::size_t> axes) {
  require_defined(a, "permute");
  const std::size_t rank = a.rank();
  if (axes.size() != rank) throw DimensionError("permute: axis count does not match rank");
  std::vector<bool> seen(rank, false);
  for (auto ax : axes) {
    if (ax >= rank || seen[ax]) throw DimensionError("permute: axes are not a permutation");
    seen[ax] = true;
  }
  const auto in_strides = strides_of(a.shape());
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = a.shape()[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  // map[out_flat] = in_flat
  const std::size_t total = a.numel();
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  const auto in = a.values();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = in[map[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {a},
                     [map = std::move(map)](std::span<const double> g,
                                            std::span<const ImplPtr> ops) {
                       auto ga = grad_target(ops[0]);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[map[i]] += g[i];
                     });
}

Tensor permute(const Tensor& a, std::initializer_list<std::size_t> axes) {
  return permute(a, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat");
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " +
                             shape_str(first));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t row = p.shape()[axis] * inner;
    const auto v = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.begin() + o * row, row, out.begin() + o * out_row + offset);
    offset += row;
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [outer, out_row, offsets = std::move(offsets)](
                         std::span<const double> g, std::span<const ImplPtr> ops) {
                       for (std::size_t i = 0; i < ops.size(); ++i) {
                         auto gp = grad_target(ops[i]);
                         if (gp.empty()) continue;
                         const std::size_t row = gp.size() / outer;
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t j = 0; j < row; ++j)
                             gp[o * row + j] += g[o * out_row + offsets[i] + j];
                       }
                     });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  if (x.rank() != 2) throw DimensionError("layer_norm expects [n x d], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias length must equal row width " +
                         std::to_string(d));
  }
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> normalized(n * d);
  std::vector<double> inv_std(n);
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * inv;
      normalized[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [n, d, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          std::span<const double> g, std::span<const ImplPtr> ops) {
        auto gx = grad_target(ops[0]);
        auto ggain = grad_target(ops[1]);
        auto gbias = grad_target(ops[2]);
        const auto& gainv = ops[1]->data;
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < n; ++r) {
          const double* h = normalized.data() + r * d;
          const double* gr = g.data() + r * d;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            if (!ggain.empty()) ggain[c] += gr[c] * h[c];
            if (!gbias.empty()) gbias[c] += gr[c];
            dh[c] = gr[c] * gainv[c];
            mean_dh += dh[c];
            mean_dh_h += dh[c] * h[c];
          }
          if (gx.empty()) continue;
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c)
            gx[r * d + c] += inv_std[r] * (dh[c] - mean_dh - h[c] * mean_dh_h);
        }
      });
}

}  // namespace ckan
