#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ckan/parameters.h"
#include "ckan/spline.h"
#include "ckan/tensor.h"

namespace ckan {

// Hyper-parameters shared by every KAN layer of a network.
struct KanOptions {
  int spline_degree = 3;
  std::size_t spline_basis = 8;
  double grid_lo = -2.0;
  double grid_hi = 2.0;
  // rank_p = rank_s = min(max_rank, d_out, d_in)
  std::size_t max_rank = 8;
  // Scale of the initial factorized map relative to a fan-in scaled Gaussian.
  double init_gain = 0.1;
  double layer_norm_eps = 1e-5;

  SplineGrid grid() const { return SplineGrid(spline_degree, spline_basis, grid_lo, grid_hi); }
};

// W = sum_jk a_jk M_jk with learnable a and fixed basis matrices M.
//
// The default construction uses rank-one bases M_jk = u_j v_k^T, where u_j and
// v_k are columns of seeded orthonormal matrices, so W = U a V^T is formed
// without materializing every M_jk. An explicit list of dense bases is also
// accepted.
class FactorizedLinear {
 public:
  FactorizedLinear() = default;
  FactorizedLinear(std::size_t d_in, std::size_t d_out, std::size_t rank_p, std::size_t rank_s,
                   std::uint64_t basis_seed);
  // `bases` is row-major over (j, k): bases[j * rank_s + k] = M_jk.
  static FactorizedLinear from_bases(std::size_t rank_p, std::size_t rank_s,
                                     std::vector<Tensor> bases);

  std::size_t d_in() const { return d_in_; }
  std::size_t d_out() const { return d_out_; }
  std::size_t rank_p() const { return rank_p_; }
  std::size_t rank_s() const { return rank_s_; }

  // Learnable [rank_p x rank_s] coefficients.
  Tensor& coefficients() { return a_; }
  const Tensor& coefficients() const { return a_; }

  // Dense d_out x d_in matrix of M_jk.
  Tensor basis(std::size_t j, std::size_t k) const;

  // Sum_jk a_jk M_jk, differentiable w.r.t. a only. With grad mode off the
  // result is cached until `a` changes.
  Tensor materialize() const;
  void clear_cache() const { cache_ = {}; }
  // Multiply-accumulates spent by one uncached materialize().
  std::int64_t materialize_macs() const;

 private:
  std::size_t d_in_ = 0, d_out_ = 0, rank_p_ = 0, rank_s_ = 0;
  Tensor a_;
  Tensor u_;        // [d_out x rank_p], outer-product mode
  Tensor v_t_;      // [rank_s x d_in]
  Tensor stacked_;  // [rank_p*rank_s x d_out*d_in], explicit mode

  struct Cache {
    const void* owner = nullptr;
    std::uint64_t version = 0;
    Tensor weight;
  };
  mutable Cache cache_;
};

// One layer y = LayerNorm(W silu(x) + phi(x)) applied row-wise to x[n x d_in].
struct KanLayer {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  FactorizedLinear linear;
  SplineGrid grid;
  // alpha[i][m][o]: coefficient m of the spline from input i to output o.
  Tensor alpha;
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  // Coefficients of the (i, o) spline.
  std::vector<double> coeffs(std::size_t i, std::size_t o) const;
  ParameterList parameters(const std::string& prefix) const;
};

// Throws ConfigError when d_out < 2 (LayerNorm over one value is degenerate).
KanLayer make_kan_layer(std::size_t d_in, std::size_t d_out, const KanOptions& options,
                        Rng& rng);

// out[r, o] = sum_i phi_{i,o}(x[r, i]); fused op, differentiable in x and alpha.
Tensor spline_term(const Tensor& x, const SplineGrid& grid, const Tensor& alpha);
Tensor spline_term(const Tensor& x, const KanLayer& layer);

// `weight` may carry a pre-materialized W (shared across chunks).
Tensor kan_layer_forward(const Tensor& x, const KanLayer& layer,
                         const std::optional<Tensor>& weight = std::nullopt);

struct KanNetwork {
  std::vector<KanLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  // Materialized W per layer; compute once and pass to kan_forward.
  std::vector<Tensor> materialize_weights() const;
  ParameterList parameters(const std::string& prefix) const;
};

// dims = {d_0, d_1, ..., d_m}
KanNetwork make_kan_network(const std::vector<std::size_t>& dims, const KanOptions& options,
                            Rng& rng);

// Sequential application. An empty network is the identity.
Tensor kan_forward(const Tensor& x, const KanNetwork& net);
Tensor kan_forward(const Tensor& x, const KanNetwork& net, const std::vector<Tensor>& weights);

// Multiply-accumulate count of one row through the network (linear + spline
// contractions), matching what the kernels report to the counters.
std::int64_t kan_row_macs(const KanNetwork& net);

}  // namespace ckan
