#include "ckan/ckan_operator.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>

#include "ckan/autograd.h"
#include "ckan/errors.h"
#include "ckan/instrument.h"
#include "ckan/ops.h"

namespace ckan {

using detail::grad_target;
using detail::ImplPtr;

namespace {

std::atomic<bool> g_break_fold{false};

instrument::Counter& unfold_counter() {
  static auto& c = instrument::registry().counter(instrument::kUnfoldElements);
  return c;
}

instrument::Gauge& patch_gauge() {
  static auto& g = instrument::registry().gauge(instrument::kPatchBuffer);
  return g;
}

std::size_t axis_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p, std::size_t d,
                     const char* axis) {
  const long long span = static_cast<long long>(d) * (static_cast<long long>(k) - 1) + 1;
  const long long numer = static_cast<long long>(in) + 2 * static_cast<long long>(p) - span;
  if (numer < 0) {
    throw GeometryError(std::string("kernel extent exceeds padded input along ") + axis);
  }
  return static_cast<std::size_t>(numer / static_cast<long long>(s) + 1);
}

}  // namespace

OutputDims output_dims(std::size_t height, std::size_t width, const CkanConfig& cfg) {
  if (cfg.c_in == 0 || cfg.c_out == 0) throw GeometryError("channel counts must be positive");
  for (int a = 0; a < 2; ++a) {
    if (cfg.kernel[a] == 0 || cfg.stride[a] == 0 || cfg.dilation[a] == 0) {
      throw GeometryError("kernel, stride and dilation must be positive");
    }
  }
  if (cfg.chunk_pixels == 0) throw GeometryError("chunk_pixels must be >= 1");
  OutputDims d;
  d.h_out = axis_out(height, cfg.kernel[0], cfg.stride[0], cfg.padding[0], cfg.dilation[0], "height");
  d.w_out = axis_out(width, cfg.kernel[1], cfg.stride[1], cfg.padding[1], cfg.dilation[1], "width");
  d.locations = d.h_out * d.w_out;
  d.patch_dim = cfg.patch_dim();
  return d;
}

ParameterList Ckan::parameters(const std::string& prefix) const {
  if (const auto* net = std::get_if<KanNetwork>(&projector)) return net->parameters(prefix);
  const auto& lin = std::get<LinearProjector>(projector);
  ParameterList out{{prefix + ".weight", lin.weight}};
  if (lin.bias.defined()) out.push_back({prefix + ".bias", lin.bias});
  return out;
}

Ckan make_ckan(const CkanConfig& cfg, const KanOptions& options, Rng& rng,
               std::vector<std::size_t> hidden) {
  const std::size_t k = cfg.patch_dim();
  if (hidden.empty()) hidden.push_back(k);
  std::vector<std::size_t> dims{k};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(cfg.c_out);
  return Ckan{cfg, make_kan_network(dims, options, rng)};
}

Ckan make_conv(const CkanConfig& cfg, Rng& rng, bool with_bias, double gain) {
  const std::size_t k = cfg.patch_dim();
  LinearProjector lin;
  lin.weight = parameter(gaussian_tensor({cfg.c_out, k}, gain / std::sqrt(static_cast<double>(k)), rng));
  if (with_bias) lin.bias = parameter({cfg.c_out}, 0.0);
  return Ckan{cfg, std::move(lin)};
}

Tensor PatchMatrix::as_bkl() const {
  const std::size_t n = columns();
  return permute(reshape(rows, {batch, n, dims.patch_dim}), {0, 2, 1});
}

PatchMatrix unfold(const Tensor& x, const CkanConfig& cfg) {
  if (x.rank() != 4) throw DimensionError("unfold expects [B x C x H x W], got " + shape_str(x.shape()));
  const auto dims = output_dims(x.dim(2), x.dim(3), cfg);
  return unfold_range(x, cfg, 0, dims.locations);
}

PatchMatrix unfold_range(const Tensor& x, const CkanConfig& cfg, std::size_t l_begin,
                         std::size_t l_end) {
  if (x.rank() != 4) throw DimensionError("unfold expects [B x C x H x W], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  if (channels != cfg.c_in) {
    throw DimensionError("unfold: input has " + std::to_string(channels) + " channels, config " +
                         std::to_string(cfg.c_in));
  }
  const auto dims = output_dims(height, width, cfg);
  if (l_begin >= l_end || l_end > dims.locations) throw DimensionError("unfold: invalid column range");

  const std::size_t kh = cfg.kernel[0], kw = cfg.kernel[1];
  const std::size_t k = dims.patch_dim;
  const std::size_t n = l_end - l_begin;
  // src[row * K + q] = flat input index, or -1 for padding.
  std::vector<std::ptrdiff_t> src(batch * n * k);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t l = l_begin + j;
      const auto oh = static_cast<std::ptrdiff_t>(l / dims.w_out);
      const auto ow = static_cast<std::ptrdiff_t>(l % dims.w_out);
      std::ptrdiff_t* dst = src.data() + (b * n + j) * k;
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::ptrdiff_t ih = oh * static_cast<std::ptrdiff_t>(cfg.stride[0]) -
                                    static_cast<std::ptrdiff_t>(cfg.padding[0]) +
                                    static_cast<std::ptrdiff_t>(ki * cfg.dilation[0]);
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::ptrdiff_t iw = ow * static_cast<std::ptrdiff_t>(cfg.stride[1]) -
                                      static_cast<std::ptrdiff_t>(cfg.padding[1]) +
                                      static_cast<std::ptrdiff_t>(kj * cfg.dilation[1]);
            const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(height) &&
                                iw < static_cast<std::ptrdiff_t>(width);
            *dst++ = inside ? static_cast<std::ptrdiff_t>(((b * channels + c) * height) * width) +
                                  ih * static_cast<std::ptrdiff_t>(width) + iw
                            : -1;
          }
        }
      }
    }
  }
  const auto xv = x.values();
  std::vector<double> rows(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) rows[i] = src[i] >= 0 ? xv[src[i]] : 0.0;
  unfold_counter().add(static_cast<std::int64_t>(rows.size()));

  const auto elements = static_cast<std::int64_t>(rows.size());
  Tensor out = detail::make_result(
      "unfold", {batch * n, k}, std::move(rows), {x},
      [src = std::move(src)](std::span<const double> g, std::span<const ImplPtr> ops) {
        auto gx = grad_target(ops[0]);
        if (gx.empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (src[i] >= 0) gx[src[i]] += g[i];
      });
  out.impl()->attachment = std::make_shared<instrument::GaugeToken>(patch_gauge(), elements);
  return PatchMatrix{std::move(out), batch, l_begin, l_end, height, width, dims};
}

Tensor project_patches(const PatchMatrix& u, const Ckan& op,
                       const std::vector<Tensor>& kan_weights) {
  const std::size_t k = u.dims.patch_dim;
  const std::size_t c_out = op.config.c_out;
  Tensor projected;  // [B*n x c_out]
  if (const auto* net = std::get_if<KanNetwork>(&op.projector)) {
    if (net->input_dim() != k || net->output_dim() != c_out) {
      throw DimensionError("KAN projector maps " + std::to_string(net->input_dim()) + " -> " +
                           std::to_string(net->output_dim()) + ", patches need " +
                           std::to_string(k) + " -> " + std::to_string(c_out));
    }
    projected = kan_weights.empty() ? kan_forward(u.rows, *net)
                                    : kan_forward(u.rows, *net, kan_weights);
  } else {
    const auto& lin = std::get<LinearProjector>(op.projector);
    if (lin.weight.rank() != 2 || lin.weight.dim(0) != c_out || lin.weight.dim(1) != k) {
      throw DimensionError("linear projector weight must be [" + std::to_string(c_out) + "x" +
                           std::to_string(k) + "], got " + shape_str(lin.weight.shape()));
    }
    projected = linear(u.rows, lin.weight);
    if (lin.bias.defined()) projected = add_row_vector(projected, lin.bias);
  }
  return permute(reshape(projected, {u.batch, u.columns(), c_out}), {0, 2, 1});
}

Tensor fold_spatial(const Tensor& z, std::size_t h_out, std::size_t w_out) {
  if (z.rank() != 3 || z.dim(2) != h_out * w_out) {
    throw DimensionError("fold_spatial: " + shape_str(z.shape()) + " cannot fold to " +
                         std::to_string(h_out) + "x" + std::to_string(w_out));
  }
  if (g_break_fold.load()) {
    return permute(reshape(z, {z.dim(0), z.dim(1), w_out, h_out}), {0, 1, 3, 2});
  }
  return reshape(z, {z.dim(0), z.dim(1), h_out, w_out});
}

namespace {

Tensor forward_bands(const Tensor& x, const Ckan& op, std::size_t band) {
  if (x.rank() != 4) throw DimensionError("CKAN expects [B x C x H x W], got " + shape_str(x.shape()));
  const auto dims = output_dims(x.dim(2), x.dim(3), op.config);
  std::vector<Tensor> weights;
  if (const auto* net = std::get_if<KanNetwork>(&op.projector)) weights = net->materialize_weights();
  std::vector<Tensor> parts;
  for (std::size_t begin = 0; begin < dims.locations; begin += band) {
    const std::size_t end = std::min(dims.locations, begin + band);
    const PatchMatrix u = unfold_range(x, op.config, begin, end);
    parts.push_back(project_patches(u, op, weights));
  }
  Tensor z = parts.size() == 1 ? parts.front() : concat(parts, 2);
  return fold_spatial(z, dims.h_out, dims.w_out);
}

}  // namespace

Tensor ckan_forward(const Tensor& x, const Ckan& op) {
  if (x.rank() != 4) throw DimensionError("CKAN expects [B x C x H x W], got " + shape_str(x.shape()));
  const auto dims = output_dims(x.dim(2), x.dim(3), op.config);
  return forward_bands(x, op, dims.locations);
}

Tensor ckan_forward_chunked(const Tensor& x, const Ckan& op) {
  if (op.config.chunk_pixels == 0) throw GeometryError("chunk_pixels must be >= 1");
  return forward_bands(x, op, op.config.chunk_pixels);
}

CostEstimate cost_model(const Ckan& op, std::size_t batch, std::size_t height, std::size_t width) {
  const auto dims = output_dims(height, width, op.config);
  const auto b = static_cast<std::int64_t>(batch);
  const auto k = static_cast<std::int64_t>(dims.patch_dim);
  const auto l = static_cast<std::int64_t>(dims.locations);
  CostEstimate est;
  est.unfold = b * k * l;
  if (const auto* net = std::get_if<KanNetwork>(&op.projector)) {
    std::int64_t weight_macs = 0;
    for (const auto& layer : net->layers) weight_macs += layer.linear.materialize_macs();
    est.projection = b * l * kan_row_macs(*net) + weight_macs;
  } else {
    est.projection = b * l * k * static_cast<std::int64_t>(op.config.c_out);
  }
  est.total = est.unfold + est.projection;
  est.patch_buffer_full = b * k * l;
  const auto band = std::min<std::int64_t>(static_cast<std::int64_t>(op.config.chunk_pixels), l);
  est.patch_buffer_chunked = b * k * band;
  est.chunks = (dims.locations + op.config.chunk_pixels - 1) / op.config.chunk_pixels;
  return est;
}

void clear_weight_cache(Ckan& op) {
  if (auto* net = std::get_if<KanNetwork>(&op.projector)) {
    for (auto& layer : net->layers) layer.linear.clear_cache();
  }
}

namespace debug {
void set_break_fold(bool on) { g_break_fold.store(on); }
bool break_fold() { return g_break_fold.load(); }
}  // namespace debug

}  // namespace ckan
