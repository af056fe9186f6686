#include "ckan/models.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "ckan/errors.h"
#include "ckan/ops.h"

namespace ckan {

Tensor depth_to_space(const Tensor& x, std::size_t r) {
  if (x.rank() != 4) throw DimensionError("depth_to_space expects rank 4, got " + shape_str(x.shape()));
  if (r == 0) throw ConfigError("depth_to_space: factor must be positive");
  const std::size_t b = x.dim(0), crr = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (crr % (r * r) != 0) {
    throw ConfigError("depth_to_space: " + std::to_string(crr) + " channels not divisible by " +
                      std::to_string(r * r));
  }
  const std::size_t c = crr / (r * r);
  Tensor t = reshape(x, {b, c, r, r, h, w});
  t = permute(t, {0, 1, 4, 2, 5, 3});
  return reshape(t, {b, c, h * r, w * r});
}

Tensor space_to_depth(const Tensor& x, std::size_t r) {
  if (x.rank() != 4) throw DimensionError("space_to_depth expects rank 4, got " + shape_str(x.shape()));
  if (r == 0) throw ConfigError("space_to_depth: factor must be positive");
  const std::size_t b = x.dim(0), c = x.dim(1), hr = x.dim(2), wr = x.dim(3);
  if (hr % r != 0 || wr % r != 0) throw ConfigError("space_to_depth: spatial size not divisible");
  const std::size_t h = hr / r, w = wr / r;
  Tensor t = reshape(x, {b, c, h, r, w, r});
  t = permute(t, {0, 1, 3, 5, 2, 4});
  return reshape(t, {b, c * r * r, h, w});
}

void GeneratorConfig::validate() const {
  if (base_channels < 2) throw ConfigError("generator.base_channels must be >= 2");
  if (num_residual_blocks < 1) throw ConfigError("generator.num_residual_blocks must be >= 1");
  if (upscale < 2 || !std::has_single_bit(upscale)) {
    throw ConfigError("generator.upscale must be a power of two >= 2");
  }
  if (chunk_pixels < 1) throw ConfigError("ckan.chunk_pixels must be >= 1");
  if (!(residual_gain >= 0.0)) throw ConfigError("generator.residual_gain must be >= 0");
  kan.grid();
}

namespace {

CkanConfig same_conv(std::size_t c_in, std::size_t c_out, std::size_t chunk) {
  CkanConfig cfg;
  cfg.c_in = c_in;
  cfg.c_out = c_out;
  cfg.kernel = {3, 3};
  cfg.padding = {1, 1};
  cfg.chunk_pixels = chunk;
  return cfg;
}

std::vector<std::size_t> hidden_for(const GeneratorConfig& cfg, const CkanConfig& geom) {
  return {cfg.kan_hidden == 0 ? geom.patch_dim() : cfg.kan_hidden};
}

Ckan make_projector(const GeneratorConfig& cfg, const CkanConfig& geom, Rng& rng, double gain,
                    bool use_ckan) {
  if (!use_ckan) return make_conv(geom, rng, true, gain);
  Ckan op = make_ckan(geom, cfg.kan, rng, hidden_for(cfg, geom));
  auto& net = std::get<KanNetwork>(op.projector);
  auto g = net.layers.back().gain.mutable_values();
  std::fill(g.begin(), g.end(), gain);
  return op;
}

void set_chunk(Ckan& op, std::size_t chunk) { op.config.chunk_pixels = chunk; }

}  // namespace

Generator make_generator(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x47454E));
  const std::size_t c = cfg.base_channels;
  Generator g;
  g.config = cfg;
  g.head = make_conv(same_conv(3, c, cfg.chunk_pixels), rng);
  for (std::size_t i = 0; i < cfg.num_residual_blocks; ++i) {
    const auto geom = same_conv(c, c, cfg.chunk_pixels);
    ResidualBlock block{make_projector(cfg, geom, rng, 1.0, cfg.ckan_blocks),
                        make_projector(cfg, geom, rng, cfg.residual_gain, cfg.ckan_blocks)};
    g.blocks.push_back(std::move(block));
  }
  g.trunk = make_conv(same_conv(c, c, cfg.chunk_pixels), rng, true, cfg.residual_gain);
  for (std::size_t s = cfg.upscale; s > 1; s /= 2) {
    g.upsample.push_back(make_projector(cfg, same_conv(c, 4 * c, cfg.chunk_pixels), rng, 1.0,
                                       cfg.ckan_blocks && cfg.ckan_upsample));
  }
  g.tail = make_conv(same_conv(c, 3, cfg.chunk_pixels), rng);
  return g;
}

ParameterList Generator::parameters() const {
  ParameterList out = head.parameters("head");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    append(out, blocks[i].first.parameters(p + ".first"));
    append(out, blocks[i].second.parameters(p + ".second"));
  }
  append(out, trunk.parameters("trunk"));
  for (std::size_t i = 0; i < upsample.size(); ++i) {
    append(out, upsample[i].parameters("up" + std::to_string(i)));
  }
  append(out, tail.parameters("tail"));
  return out;
}

void Generator::set_chunk_pixels(std::size_t chunk) {
  if (chunk < 1) throw ConfigError("ckan.chunk_pixels must be >= 1");
  config.chunk_pixels = chunk;
  set_chunk(head, chunk);
  for (auto& b : blocks) {
    set_chunk(b.first, chunk);
    set_chunk(b.second, chunk);
  }
  set_chunk(trunk, chunk);
  for (auto& u : upsample) set_chunk(u, chunk);
  set_chunk(tail, chunk);
}

void Generator::clear_weight_caches() {
  clear_weight_cache(head);
  for (auto& b : blocks) {
    clear_weight_cache(b.first);
    clear_weight_cache(b.second);
  }
  clear_weight_cache(trunk);
  for (auto& u : upsample) clear_weight_cache(u);
  clear_weight_cache(tail);
}

Tensor residual_branch(const Tensor& x, const ResidualBlock& block) {
  return ckan_forward_chunked(silu(ckan_forward_chunked(x, block.first)), block.second);
}

Tensor residual_block(const Tensor& x, const ResidualBlock& block) {
  Tensor f = residual_branch(x, block);
  if (f.shape() != x.shape()) {
    throw DimensionError("residual branch changes shape " + shape_str(x.shape()) + " -> " +
                         shape_str(f.shape()));
  }
  return add(x, f);
}

Tensor generator_features(const Tensor& lr, const Generator& g) {
  if (lr.rank() != 4 || lr.dim(1) != 3) {
    throw DimensionError("generator expects [B x 3 x h x w], got " + shape_str(lr.shape()));
  }
  Tensor h = silu(ckan_forward_chunked(lr, g.head));
  Tensor t = h;
  for (const auto& b : g.blocks) t = residual_block(t, b);
  return add(h, ckan_forward_chunked(t, g.trunk));
}

Tensor generator_reconstruct(const Tensor& features, const Generator& g) {
  Tensor t = features;
  for (const auto& up : g.upsample) t = silu(depth_to_space(ckan_forward_chunked(t, up), 2));
  Tensor out = tanh(ckan_forward_chunked(t, g.tail));
  return scale(add_scalar(out, 1.0), 0.5);
}

Tensor generator_forward(const Tensor& lr, const Generator& g) {
  return generator_reconstruct(generator_features(lr, g), g);
}

Discriminator make_discriminator(const DiscriminatorConfig& cfg) {
  if (cfg.channels.empty()) throw ConfigError("discriminator needs at least one stage");
  for (auto c : cfg.channels) {
    if (c == 0) throw ConfigError("discriminator channel counts must be positive");
  }
  Rng rng(derive_seed(cfg.seed, 0x444953));
  Discriminator d;
  d.config = cfg;
  std::size_t c_in = 3;
  for (auto c : cfg.channels) {
    CkanConfig geom;
    geom.c_in = c_in;
    geom.c_out = c;
    geom.kernel = {3, 3};
    geom.stride = {2, 2};
    geom.padding = {1, 1};
    // Leaky activations: scale the fan-in init accordingly.
    d.stages.push_back(make_conv(geom, rng, true, std::sqrt(2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope))));
    c_in = c;
  }
  d.fc_weight = parameter(gaussian_tensor({1, c_in}, 1.0 / std::sqrt(static_cast<double>(c_in)), rng));
  d.fc_bias = parameter({1}, 0.0);
  return d;
}

std::size_t Discriminator::min_input() const { return std::size_t{1} << stages.size(); }

ParameterList Discriminator::parameters() const {
  ParameterList out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    append(out, stages[i].parameters("disc" + std::to_string(i)));
  }
  out.push_back({"disc.fc.weight", fc_weight});
  out.push_back({"disc.fc.bias", fc_bias});
  return out;
}

Tensor global_average(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("global_average expects rank 4, got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor ones({hw, 1}, 1.0 / static_cast<double>(hw));
  return reshape(matmul(reshape(x, {b * c, hw}), ones), {b, c});
}

Tensor discriminator_forward(const Tensor& img, const Discriminator& d) {
  if (img.rank() != 4 || img.dim(1) != 3) {
    throw DimensionError("discriminator expects [B x 3 x H x W], got " + shape_str(img.shape()));
  }
  const std::size_t need = d.min_input();
  if (img.dim(2) < need || img.dim(3) < need) {
    throw GeometryError("discriminator input " + std::to_string(img.dim(2)) + "x" +
                        std::to_string(img.dim(3)) + " is below the minimum " +
                        std::to_string(need) + "x" + std::to_string(need));
  }
  Tensor t = img;
  for (const auto& stage : d.stages) t = leaky_relu(ckan_forward_chunked(t, stage), d.config.leaky_slope);
  return add_row_vector(linear(global_average(t), d.fc_weight), d.fc_bias);
}

namespace {

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const char* s) { bytes(s, std::strlen(s)); }
};

}  // namespace

std::uint64_t config_hash(const GeneratorConfig& g, const DiscriminatorConfig& d) {
  Fnv f;
  f.str("generator");
  f.u64(g.base_channels);
  f.u64(g.num_residual_blocks);
  f.u64(g.upscale);
  f.u64(g.ckan_blocks ? 1 : 0);
  f.u64(g.ckan_upsample ? 1 : 0);
  f.u64(g.kan_hidden);
  f.u64(static_cast<std::uint64_t>(g.kan.spline_degree));
  f.u64(g.kan.spline_basis);
  f.f64(g.kan.grid_lo);
  f.f64(g.kan.grid_hi);
  f.u64(g.kan.max_rank);
  f.f64(g.kan.layer_norm_eps);
  f.str("discriminator");
  f.u64(d.channels.size());
  for (auto c : d.channels) f.u64(c);
  f.f64(d.leaky_slope);
  return f.h;
}

}  // namespace ckan
