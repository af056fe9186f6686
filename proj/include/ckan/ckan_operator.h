#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "ckan/kan_layer.h"
#include "ckan/parameters.h"
#include "ckan/tensor.h"

namespace ckan {

// Convolution geometry shared by the CKAN operator and the plain-conv mode.
// Pairs are (height, width).
struct CkanConfig {
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::array<std::size_t, 2> kernel{3, 3};
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
  std::array<std::size_t, 2> dilation{1, 1};
  // Maximum number of output locations whose patches are materialized at once.
  std::size_t chunk_pixels = 4096;

  // K = c_in * k_H * k_W
  std::size_t patch_dim() const { return c_in * kernel[0] * kernel[1]; }
};

struct OutputDims {
  std::size_t h_out = 0;
  std::size_t w_out = 0;
  std::size_t locations = 0;  // L = h_out * w_out
  std::size_t patch_dim = 0;  // K
};

// floor((H + 2p - d(k - 1) - 1) / s + 1) per axis. Throws GeometryError when
// an output side would be < 1 or the configuration is malformed.
OutputDims output_dims(std::size_t height, std::size_t width, const CkanConfig& cfg);

// Linear projector: weight [c_out x K] and an optional bias [c_out]. This is
// ordinary im2col convolution.
struct LinearProjector {
  Tensor weight;
  Tensor bias;
};

using Projector = std::variant<KanNetwork, LinearProjector>;

// Unfold -> per-patch projection -> spatial fold.
struct Ckan {
  CkanConfig config;
  Projector projector;

  bool is_kan() const { return std::holds_alternative<KanNetwork>(projector); }
  ParameterList parameters(const std::string& prefix) const;
};

// KAN projector with widths K -> hidden... -> c_out. Empty `hidden` means one
// hidden layer of width K.
Ckan make_ckan(const CkanConfig& cfg, const KanOptions& options, Rng& rng,
               std::vector<std::size_t> hidden = {});
// Plain convolution: weight ~ N(0, (gain^2)/K), zero bias when `with_bias`.
Ckan make_conv(const CkanConfig& cfg, Rng& rng, bool with_bias = true, double gain = 1.0);

// Patches of output locations [l_begin, l_end), stored one patch per row:
// row b * n + j (n = l_end - l_begin) is column l_begin + j of the unfolded
// tensor U[B x K x L]. Entries within a patch are channel-major, then kernel
// row, then kernel column. The row buffer is registered with the
// "ckan.patch_buffer" gauge for as long as it lives.
struct PatchMatrix {
  Tensor rows;
  std::size_t batch = 0;
  std::size_t l_begin = 0;
  std::size_t l_end = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  OutputDims dims;

  std::size_t columns() const { return l_end - l_begin; }
  // The [B x K x (l_end - l_begin)] layout of the same patches.
  Tensor as_bkl() const;
};

PatchMatrix unfold(const Tensor& x, const CkanConfig& cfg);
PatchMatrix unfold_range(const Tensor& x, const CkanConfig& cfg, std::size_t l_begin,
                         std::size_t l_end);

// Projects every patch, returning [B x c_out x columns]. `kan_weights` may
// hold pre-materialized factorized weights of a KAN projector.
Tensor project_patches(const PatchMatrix& u, const Ckan& op,
                       const std::vector<Tensor>& kan_weights = {});

// [B x c_out x L] -> [B x c_out x H_out x W_out]; column l lands at
// (l / W_out, l % W_out).
Tensor fold_spatial(const Tensor& z, std::size_t h_out, std::size_t w_out);

Tensor ckan_forward(const Tensor& x, const Ckan& op);
// Processes contiguous bands of at most config.chunk_pixels output locations
// in row-major order; results equal ckan_forward.
Tensor ckan_forward_chunked(const Tensor& x, const Ckan& op);

// Closed-form operation counts for one forward pass over a [B x c_in x H x W]
// input, in the units reported by the instrumentation counters.
struct CostEstimate {
  std::int64_t unfold = 0;          // B * K * L patch elements gathered
  std::int64_t projection = 0;      // multiply-accumulates of the projector
  std::int64_t total = 0;
  std::int64_t patch_buffer_full = 0;     // B * K * L
  std::int64_t patch_buffer_chunked = 0;  // B * K * min(chunk_pixels, L)
  std::size_t chunks = 0;
};

CostEstimate cost_model(const Ckan& op, std::size_t batch, std::size_t height, std::size_t width);

// Drops cached factorized weights so the next no-grad forward rebuilds them.
void clear_weight_cache(Ckan& op);

namespace debug {
// Negative control for the self-test: when set, fold_spatial writes columns
// in column-major spatial order.
void set_break_fold(bool on);
bool break_fold();
}  // namespace debug

}  // namespace ckan
