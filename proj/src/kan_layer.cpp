#include "ckan/kan_layer.h"

#include <algorithm>
#include <array>
#include <cmath>

#include "ckan/autograd.h"
#include "ckan/errors.h"
#include "ckan/instrument.h"
#include "ckan/ops.h"

namespace ckan {

using detail::grad_target;
using detail::ImplPtr;

namespace {

// Columns of a seeded Gaussian [rows x cols] matrix, orthonormalized by
// modified Gram-Schmidt. Returned row-major.
std::vector<double> orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<std::vector<double>> q(cols, std::vector<double>(rows));
  for (std::size_t c = 0; c < cols; ++c) {
    for (;;) {
      for (auto& v : q[c]) v = rng.normal();
      for (std::size_t prev = 0; prev < c; ++prev) {
        double dot = 0.0;
        for (std::size_t r = 0; r < rows; ++r) dot += q[c][r] * q[prev][r];
        for (std::size_t r = 0; r < rows; ++r) q[c][r] -= dot * q[prev][r];
      }
      double norm = 0.0;
      for (double v : q[c]) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (auto& v : q[c]) v /= norm;
        break;
      }
    }
  }
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = q[c][r];
  return out;
}

instrument::Counter& spline_mac_counter() {
  static auto& c = instrument::registry().counter(instrument::kSplineMacs);
  return c;
}

instrument::Counter& basis_counter() {
  static auto& c = instrument::registry().counter(instrument::kSplineBasisEvals);
  return c;
}

}  // namespace

FactorizedLinear::FactorizedLinear(std::size_t d_in, std::size_t d_out, std::size_t rank_p,
                                   std::size_t rank_s, std::uint64_t basis_seed)
    : d_in_(d_in), d_out_(d_out), rank_p_(rank_p), rank_s_(rank_s) {
  if (rank_p == 0 || rank_s == 0 || rank_p > d_out || rank_s > d_in) {
    throw ConfigError("factorized linear ranks must satisfy 1 <= rank_p <= d_out and "
                      "1 <= rank_s <= d_in");
  }
  Rng rng(basis_seed);
  u_ = Tensor({d_out, rank_p}, orthonormal_columns(d_out, rank_p, rng));
  v_t_ = transpose(Tensor({d_in, rank_s}, orthonormal_columns(d_in, rank_s, rng)));
  a_ = parameter({rank_p, rank_s});
}

FactorizedLinear FactorizedLinear::from_bases(std::size_t rank_p, std::size_t rank_s,
                                              std::vector<Tensor> bases) {
  if (rank_p == 0 || rank_s == 0 || bases.size() != rank_p * rank_s) {
    throw ConfigError("factorized linear needs rank_p * rank_s basis matrices");
  }
  const Shape& shape = bases.front().shape();
  if (shape.size() != 2) throw DimensionError("basis matrices must be rank 2");
  std::vector<double> stacked;
  stacked.reserve(bases.size() * bases.front().numel());
  for (const auto& m : bases) {
    if (m.shape() != shape) {
      throw DimensionError("basis matrices disagree in shape: " + shape_str(m.shape()) +
                           " vs " + shape_str(shape));
    }
    stacked.insert(stacked.end(), m.values().begin(), m.values().end());
  }
  FactorizedLinear f;
  f.d_out_ = shape[0];
  f.d_in_ = shape[1];
  f.rank_p_ = rank_p;
  f.rank_s_ = rank_s;
  f.stacked_ = Tensor({rank_p * rank_s, f.d_out_ * f.d_in_}, std::move(stacked));
  f.a_ = parameter({rank_p, rank_s});
  return f;
}

Tensor FactorizedLinear::basis(std::size_t j, std::size_t k) const {
  if (j >= rank_p_ || k >= rank_s_) throw DimensionError("basis index out of range");
  std::vector<double> m(d_out_ * d_in_);
  if (stacked_.defined()) {
    const auto row = stacked_.values().subspan((j * rank_s_ + k) * m.size(), m.size());
    std::copy(row.begin(), row.end(), m.begin());
  } else {
    const auto u = u_.values();
    const auto vt = v_t_.values();
    for (std::size_t o = 0; o < d_out_; ++o)
      for (std::size_t i = 0; i < d_in_; ++i)
        m[o * d_in_ + i] = u[o * rank_p_ + j] * vt[k * d_in_ + i];
  }
  return Tensor({d_out_, d_in_}, std::move(m));
}

Tensor FactorizedLinear::materialize() const {
  const bool cacheable = !grad_enabled();
  if (cacheable && cache_.weight.defined() && cache_.owner == a_.id() &&
      cache_.version == a_.version()) {
    return cache_.weight;
  }
  Tensor w;
  if (stacked_.defined()) {
    w = reshape(matmul(reshape(a_, {1, rank_p_ * rank_s_}), stacked_), {d_out_, d_in_});
  } else {
    w = matmul(matmul(u_, a_), v_t_);
  }
  if (cacheable) cache_ = {a_.id(), a_.version(), w};
  return w;
}

std::int64_t FactorizedLinear::materialize_macs() const {
  const auto rp = static_cast<std::int64_t>(rank_p_), rs = static_cast<std::int64_t>(rank_s_);
  const auto dout = static_cast<std::int64_t>(d_out_), din = static_cast<std::int64_t>(d_in_);
  if (stacked_.defined()) return rp * rs * dout * din;
  return dout * rp * rs + dout * rs * din;
}

std::vector<double> KanLayer::coeffs(std::size_t i, std::size_t o) const {
  const std::size_t ds = grid.num_basis();
  if (i >= d_in || o >= d_out) throw DimensionError("spline index out of range");
  std::vector<double> c(ds);
  const auto a = alpha.values();
  for (std::size_t m = 0; m < ds; ++m) c[m] = a[(i * ds + m) * d_out + o];
  return c;
}

ParameterList KanLayer::parameters(const std::string& prefix) const {
  return {{prefix + ".a", linear.coefficients()},
          {prefix + ".alpha", alpha},
          {prefix + ".ln_gain", gain},
          {prefix + ".ln_bias", bias}};
}

KanLayer make_kan_layer(std::size_t d_in, std::size_t d_out, const KanOptions& options,
                        Rng& rng) {
  if (d_in == 0) throw ConfigError("KAN layer input dimension must be positive");
  if (d_out < 2) {
    throw ConfigError("KAN layer output dimension must be >= 2 for LayerNorm, got " +
                      std::to_string(d_out));
  }
  KanLayer layer;
  layer.d_in = d_in;
  layer.d_out = d_out;
  layer.grid = options.grid();
  layer.eps = options.layer_norm_eps;
  const std::size_t rank = std::min({options.max_rank, d_out, d_in});
  layer.linear = FactorizedLinear(d_in, d_out, rank, rank, rng.next());
  // Frobenius norm matched to a fan-in scaled Gaussian map with the given gain.
  const double stddev =
      options.init_gain * std::sqrt(static_cast<double>(d_out) / static_cast<double>(rank * rank));
  auto a = layer.linear.coefficients().mutable_values();
  for (auto& v : a) v = rng.normal(0.0, stddev);
  layer.alpha = parameter({d_in, layer.grid.num_basis(), d_out});
  layer.gain = parameter({d_out}, 1.0);
  layer.bias = parameter({d_out}, 0.0);
  return layer;
}

Tensor spline_term(const Tensor& x, const SplineGrid& grid, const Tensor& alpha) {
  if (x.rank() != 2) throw DimensionError("spline_term expects [n x d_in], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d_in = x.dim(1);
  const std::size_t ds = grid.num_basis();
  if (alpha.rank() != 3 || alpha.dim(0) != d_in || alpha.dim(1) != ds) {
    throw DimensionError("spline coefficients " + shape_str(alpha.shape()) +
                         " do not match input width " + std::to_string(d_in) + " and " +
                         std::to_string(ds) + " basis functions");
  }
  const std::size_t d_out = alpha.dim(2);
  const std::size_t order = static_cast<std::size_t>(grid.degree()) + 1;
  const bool record = grad_enabled() && (x.requires_grad() || alpha.requires_grad());

  const auto xv = x.values();
  const auto av = alpha.values();
  std::vector<double> out(n * d_out, 0.0);
  // Saved window per (input i, row r) in [i][r] order for the backward sweep.
  std::vector<std::uint32_t> offsets;
  std::vector<double> basis, dbasis;
  if (record) {
    offsets.resize(d_in * n);
    basis.resize(d_in * n * order);
    dbasis.resize(d_in * n * order);
  }
  std::array<double, kMaxSplineDegree + 1> vals{};
  constexpr std::size_t kRowBlock = 128;
  for (std::size_t r0 = 0; r0 < n; r0 += kRowBlock) {
    const std::size_t r1 = std::min(n, r0 + kRowBlock);
    for (std::size_t i = 0; i < d_in; ++i) {
      const double* a_i = av.data() + i * ds * d_out;
      for (std::size_t r = r0; r < r1; ++r) {
        double* v = record ? basis.data() + (i * n + r) * order : vals.data();
        double* dv = record ? dbasis.data() + (i * n + r) * order : nullptr;
        const std::size_t off = detail::eval_basis_window(grid, xv[r * d_in + i], v, dv);
        if (record) offsets[i * n + r] = static_cast<std::uint32_t>(off);
        double* __restrict o = out.data() + r * d_out;
        if (order == 4) {
          const double* __restrict c0 = a_i + off * d_out;
          const double* __restrict c1 = c0 + d_out;
          const double* __restrict c2 = c1 + d_out;
          const double* __restrict c3 = c2 + d_out;
          const double v0 = v[0], v1 = v[1], v2 = v[2], v3 = v[3];
          for (std::size_t j = 0; j < d_out; ++j)
            o[j] += v0 * c0[j] + v1 * c1[j] + v2 * c2[j] + v3 * c3[j];
        } else {
          for (std::size_t m = 0; m < order; ++m) {
            const double* __restrict c = a_i + (off + m) * d_out;
            const double vm = v[m];
            for (std::size_t j = 0; j < d_out; ++j) o[j] += vm * c[j];
          }
        }
      }
    }
  }
  basis_counter().add(static_cast<std::int64_t>(n * d_in * order));
  spline_mac_counter().add(static_cast<std::int64_t>(n * d_in * order * d_out));

  return detail::make_result(
      "spline_term", {n, d_out}, std::move(out), {x, alpha},
      [n, d_in, d_out, ds, order, offsets = std::move(offsets), basis = std::move(basis),
       dbasis = std::move(dbasis)](std::span<const double> g, std::span<const ImplPtr> ops) {
        auto gx = grad_target(ops[0]);
        auto ga = grad_target(ops[1]);
        const auto& av = ops[1]->data;
        for (std::size_t i = 0; i < d_in; ++i) {
          const double* a_i = av.data() + i * ds * d_out;
          double* ga_i = ga.empty() ? nullptr : ga.data() + i * ds * d_out;
          for (std::size_t r = 0; r < n; ++r) {
            const std::size_t off = offsets[i * n + r];
            const double* v = basis.data() + (i * n + r) * order;
            const double* dv = dbasis.data() + (i * n + r) * order;
            const double* __restrict gr = g.data() + r * d_out;
            double dx = 0.0;
            if (order == 4) {
              const double* __restrict c0 = a_i + off * d_out;
              const double* __restrict c1 = c0 + d_out;
              const double* __restrict c2 = c1 + d_out;
              const double* __restrict c3 = c2 + d_out;
              const double d0 = dv[0], d1 = dv[1], d2 = dv[2], d3 = dv[3];
              if (!gx.empty()) {
#pragma omp simd reduction(+ : dx)
                for (std::size_t j = 0; j < d_out; ++j)
                  dx += (d0 * c0[j] + d1 * c1[j] + d2 * c2[j] + d3 * c3[j]) * gr[j];
              }
              if (ga_i != nullptr) {
                double* __restrict s0 = ga_i + off * d_out;
                double* __restrict s1 = s0 + d_out;
                double* __restrict s2 = s1 + d_out;
                double* __restrict s3 = s2 + d_out;
                const double v0 = v[0], v1 = v[1], v2 = v[2], v3 = v[3];
                for (std::size_t j = 0; j < d_out; ++j) {
                  const double gj = gr[j];
                  s0[j] += v0 * gj;
                  s1[j] += v1 * gj;
                  s2[j] += v2 * gj;
                  s3[j] += v3 * gj;
                }
              }
              if (!gx.empty()) gx[r * d_in + i] += dx;
              continue;
            }
            for (std::size_t m = 0; m < order; ++m) {
              if (ga_i != nullptr) {
                double* __restrict dst = ga_i + (off + m) * d_out;
                const double vm = v[m];
                for (std::size_t j = 0; j < d_out; ++j) dst[j] += vm * gr[j];
              }
              if (!gx.empty() && dv[m] != 0.0) {
                const double* __restrict c = a_i + (off + m) * d_out;
                double dot = 0.0;
#pragma omp simd reduction(+ : dot)
                for (std::size_t j = 0; j < d_out; ++j) dot += c[j] * gr[j];
                dx += dv[m] * dot;
              }
            }
            if (!gx.empty()) gx[r * d_in + i] += dx;
          }
        }
      });
}

Tensor spline_term(const Tensor& x, const KanLayer& layer) {
  if (x.rank() != 2 || x.dim(1) != layer.d_in) {
    throw DimensionError("KAN layer expects width " + std::to_string(layer.d_in) + ", got " +
                         shape_str(x.shape()));
  }
  return spline_term(x, layer.grid, layer.alpha);
}

Tensor kan_layer_forward(const Tensor& x, const KanLayer& layer,
                         const std::optional<Tensor>& weight) {
  if (x.rank() != 2 || x.dim(1) != layer.d_in) {
    throw DimensionError("KAN layer expects width " + std::to_string(layer.d_in) + ", got " +
                         shape_str(x.shape()));
  }
  const Tensor w = weight ? *weight : layer.linear.materialize();
  const Tensor base = linear(silu(x), w);
  const Tensor u = add(base, spline_term(x, layer));
  return layer_norm_rows(u, layer.gain, layer.bias, layer.eps);
}

std::size_t KanNetwork::input_dim() const { return layers.empty() ? 0 : layers.front().d_in; }
std::size_t KanNetwork::output_dim() const { return layers.empty() ? 0 : layers.back().d_out; }

std::vector<Tensor> KanNetwork::materialize_weights() const {
  std::vector<Tensor> w;
  w.reserve(layers.size());
  for (const auto& layer : layers) w.push_back(layer.linear.materialize());
  return w;
}

ParameterList KanNetwork::parameters(const std::string& prefix) const {
  ParameterList out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    append(out, layers[i].parameters(prefix + ".layer" + std::to_string(i)));
  return out;
}

KanNetwork make_kan_network(const std::vector<std::size_t>& dims, const KanOptions& options,
                            Rng& rng) {
  if (dims.size() < 2) throw ConfigError("KAN network needs at least an input and output width");
  KanNetwork net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    net.layers.push_back(make_kan_layer(dims[i], dims[i + 1], options, rng));
  return net;
}

Tensor kan_forward(const Tensor& x, const KanNetwork& net) {
  return kan_forward(x, net, net.materialize_weights());
}

Tensor kan_forward(const Tensor& x, const KanNetwork& net, const std::vector<Tensor>& weights) {
  if (weights.size() != net.layers.size()) {
    throw DimensionError("KAN forward: one weight per layer required");
  }
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
    if (net.layers[i].d_out != net.layers[i + 1].d_in) {
      throw DimensionError("KAN network dimension chain broken at layer " + std::to_string(i));
    }
  }
  Tensor h = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    h = kan_layer_forward(h, net.layers[i], weights[i]);
  return h;
}

std::int64_t kan_row_macs(const KanNetwork& net) {
  std::int64_t total = 0;
  for (const auto& layer : net.layers) {
    const auto order = static_cast<std::int64_t>(layer.grid.degree()) + 1;
    const auto dd = static_cast<std::int64_t>(layer.d_in * layer.d_out);
    total += dd + dd * order;
  }
  return total;
}

}  // namespace ckan
