#pragma once

#include <cstdint>
#include <vector>

#include "ckan/ckan_operator.h"
#include "ckan/tensor.h"

namespace ckan {

struct LossWeights {
  double lambda_adv = 1e-3;
  double lambda_perc = 1.0;
  double lambda_pix = 1e-2;

  // Weights used by the reconstruction stage.
  static LossWeights pretraining() { return {0.0, 1e-2, 1.0}; }
  // Throws ConfigError when a weight is negative or all are zero.
  void validate() const;
};

// Fixed feature pyramid: three stride-2 3x3 convolutions (8, 16, 32 channels)
// with silu activations and seeded weights. Inputs are centred by -0.5.
// Its weights never require gradients.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed = 0x5EED);

  // Feature maps of every stage for x[B x 3 x H x W].
  std::vector<Tensor> features(const Tensor& x) const;
  const std::vector<double>& stage_weights() const { return weights_; }
  std::size_t num_stages() const { return stages_.size(); }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<Ckan> stages_;
  std::vector<double> weights_;
};

// mean |hr - sr|
Tensor pixel_loss(const Tensor& hr, const Tensor& sr);
// mean softplus(-z)
Tensor adversarial_loss_g(const Tensor& logits_fake);
// sum_l w_l mean (phi_l(hr) - phi_l(sr))^2
Tensor perceptual_loss(const Tensor& hr, const Tensor& sr, const PerceptualExtractor& ex);
// mean softplus(-z_real) + mean softplus(z_fake)
Tensor discriminator_loss(const Tensor& logits_real, const Tensor& logits_fake);

struct LossBreakdown {
  Tensor total;
  Tensor pixel;
  Tensor perceptual;
  Tensor adversarial;  // undefined when no logits were supplied
  double content = 0.0;  // lambda_perc * perc + lambda_pix * pix
};

// lambda_adv L_adv + lambda_perc L_perc + lambda_pix L_pix. `logits_fake` may
// be undefined, in which case the adversarial term is absent.
LossBreakdown generator_loss(const Tensor& hr, const Tensor& sr, const Tensor& logits_fake,
                             const LossWeights& w, const PerceptualExtractor& ex);

// generator_loss without the adversarial term, with the given weights
// (pretraining weights by default).
Tensor content_loss(const Tensor& hr, const Tensor& sr, const PerceptualExtractor& ex,
                    const LossWeights& w = LossWeights::pretraining());

}  // namespace ckan
