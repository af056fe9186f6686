#pragma once

// Independent reference implementations used to check the library. Nothing
// here shares code paths with the kernels under test.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ckan/ckan_operator.h"
#include "ckan/kan_layer.h"
#include "ckan/tensor.h"

namespace ckan::oracle {

// y[b, o, i, j] = bias[o] + sum_{c,u,v} w[o, (c, u, v)] x[b, c, i s - p + u d, j s - p + v d]
// with out-of-range input reading as zero. w is [c_out x c_in k_H k_W].
std::vector<double> direct_conv(const Tensor& x, const std::vector<double>& w, const std::vector<double>& bias,
                                const CkanConfig& cfg);

// [B x K x L] patch tensor gathered by nested loops.
std::vector<double> gather_patches(const Tensor& x, const CkanConfig& cfg);

// All basis functions N_{m,p}(x) from the textbook recursion on the knot
// vector, with 0/0 taken as 0 and the last interval closed on the right.
std::vector<double> cox_de_boor_all(const std::vector<double>& knots, int degree, double x);

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;  // description of the worst entry
};

// Central finite differences of a scalar function against the gradient
// accumulated by backward(). `loss` must rebuild the graph from the current
// values on each call. Relative error is |analytic - numeric| / max(floor,
// |analytic|). At most `max_entries` entries per tensor are probed, spread
// evenly.
GradCheck check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt,
                          double step = 1e-6, std::size_t max_entries = 24, double floor = 1.0);

// sum_jk a_jk M_jk by an explicit double loop over the dense bases.
std::vector<double> materialize_naive(const FactorizedLinear& f);

// Row-by-row scalar re-implementation of one KAN layer: silu base term with
// the naive weight, spline term from the full basis recursion (input clamped
// to the grid), then LayerNorm with biased variance. x is [n x d_in] flat.
std::vector<double> kan_layer_scalar(const std::vector<double>& x, std::size_t n, const KanLayer& layer);

// Scalar-loop PSNR over flat arrays.
double psnr_loop(const std::vector<double>& a, const std::vector<double>& b, double max_val);

// SSIM by direct per-window sums with the 11x11 Gaussian (sigma 1.5) built
// from the 2-D formula.
double ssim_direct(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w,
                   double max_val);
// Mean contrast-structure term of the same windows.
double cs_direct(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w,
                 double max_val);

// Multi-scale SSIM from the direct terms: 2x2 mean pooling (odd edge dropped)
// between scales, scale count and weight renormalization as documented for
// ms_ssim, negative cs clamped to zero.
double ms_ssim_direct(std::vector<double> a, std::vector<double> b, std::size_t h, std::size_t w, double max_val);

}  // namespace ckan::oracle
