#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ckan/ckan_operator.h"
#include "ckan/kan_layer.h"
#include "ckan/parameters.h"
#include "ckan/tensor.h"

namespace ckan {

// [B x C*r*r x H x W] -> [B x C x rH x rW];
// out[b, c, h*r + i, w*r + j] = in[b, c*r*r + i*r + j, h, w].
Tensor depth_to_space(const Tensor& x, std::size_t r);
// Exact inverse of depth_to_space.
Tensor space_to_depth(const Tensor& x, std::size_t r);

struct GeneratorConfig {
  std::size_t base_channels = 32;
  std::size_t num_residual_blocks = 4;
  std::size_t upscale = 4;
  // false: plain-convolution residual blocks and upsampler (baseline mode).
  bool ckan_blocks = true;
  // CKAN expansion in the upsampler too (only with ckan_blocks). Off by
  // default: the LN'd sub-pixel expansion trains far slower on CPU budgets.
  bool ckan_upsample = false;
  // Hidden width of every CKAN projector; 0 means the patch dimension K.
  std::size_t kan_hidden = 32;
  KanOptions kan;
  std::size_t chunk_pixels = 4096;
  // Initial LayerNorm gain (or conv weight scale) of the last projector in
  // each residual branch.
  double residual_gain = 0.1;
  std::uint64_t seed = 1;

  // Throws ConfigError on invalid values.
  void validate() const;
};

struct ResidualBlock {
  Ckan first;
  Ckan second;
};

struct Generator {
  GeneratorConfig config;
  Ckan head;
  std::vector<ResidualBlock> blocks;
  Ckan trunk;
  std::vector<Ckan> upsample;
  Ckan tail;

  // Order: head, blocks (first, second), trunk, upsample stages, tail.
  ParameterList parameters() const;
  void set_chunk_pixels(std::size_t chunk);
  void clear_weight_caches();
};

Generator make_generator(const GeneratorConfig& cfg);

// x + F(x), F = CKAN -> silu -> CKAN (plain convolutions in baseline mode).
Tensor residual_block(const Tensor& x, const ResidualBlock& block);
// F(x) alone.
Tensor residual_branch(const Tensor& x, const ResidualBlock& block);

// Feature map after the global skip: head(x) + trunk(blocks(head(x))).
Tensor generator_features(const Tensor& lr, const Generator& g);
// Upsampler and tail applied to a feature map; output in [0, 1].
Tensor generator_reconstruct(const Tensor& features, const Generator& g);
// [B x 3 x h x w] -> [B x 3 x sh x sw]
Tensor generator_forward(const Tensor& lr, const Generator& g);

struct DiscriminatorConfig {
  std::vector<std::size_t> channels{16, 32, 64, 64, 64};
  double leaky_slope = 0.2;
  std::uint64_t seed = 2;
};

struct Discriminator {
  DiscriminatorConfig config;
  std::vector<Ckan> stages;
  Tensor fc_weight;  // [1 x C_last]
  Tensor fc_bias;    // [1]

  // Smallest accepted input side: one halving per stage.
  std::size_t min_input() const;
  ParameterList parameters() const;
};

Discriminator make_discriminator(const DiscriminatorConfig& cfg);

// [B x 3 x H x W] -> [B x 1] raw logits.
Tensor discriminator_forward(const Tensor& img, const Discriminator& d);

// Mean over spatial positions: [B x C x H x W] -> [B x C].
Tensor global_average(const Tensor& x);

// FNV-1a over every structural field of the generator and discriminator
// configuration (seeds and chunk size excluded).
std::uint64_t config_hash(const GeneratorConfig& g, const DiscriminatorConfig& d);

}  // namespace ckan
