#include "ckan/objectives.h"

#include <cmath>

#include "ckan/errors.h"
#include "ckan/ops.h"

namespace ckan {

void LossWeights::validate() const {
  if (!(lambda_adv >= 0.0) || !(lambda_perc >= 0.0) || !(lambda_pix >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (lambda_adv == 0.0 && lambda_perc == 0.0 && lambda_pix == 0.0) {
    throw ConfigError("at least one loss weight must be positive");
  }
}

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed) : seed_(seed) {
  Rng rng(derive_seed(seed, 0x504552));
  std::size_t c_in = 3;
  for (std::size_t c : {8, 16, 32}) {
    CkanConfig geom;
    geom.c_in = c_in;
    geom.c_out = c;
    geom.kernel = {3, 3};
    geom.stride = {2, 2};
    geom.padding = {1, 1};
    Ckan op = make_conv(geom, rng, true, std::sqrt(2.0));
    auto& lin = std::get<LinearProjector>(op.projector);
    lin.weight.set_requires_grad(false);
    lin.bias.set_requires_grad(false);
    stages_.push_back(std::move(op));
    weights_.push_back(1.0);
    c_in = c;
  }
}

std::vector<Tensor> PerceptualExtractor::features(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw DimensionError("perceptual features expect [B x 3 x H x W], got " + shape_str(x.shape()));
  }
  std::vector<Tensor> out;
  Tensor t = add_scalar(x, -0.5);
  for (const auto& s : stages_) {
    t = silu(ckan_forward_chunked(t, s));
    out.push_back(t);
  }
  return out;
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

}  // namespace

Tensor pixel_loss(const Tensor& hr, const Tensor& sr) {
  require_same(hr, sr, "pixel_loss");
  return mean(abs(sub(hr, sr)));
}

Tensor adversarial_loss_g(const Tensor& logits_fake) { return mean(softplus(scale(logits_fake, -1.0))); }

Tensor perceptual_loss(const Tensor& hr, const Tensor& sr, const PerceptualExtractor& ex) {
  require_same(hr, sr, "perceptual_loss");
  const auto fa = ex.features(hr);
  const auto fb = ex.features(sr);
  const auto& w = ex.stage_weights();
  Tensor total;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    Tensor term = scale(mean(square(sub(fa[l], fb[l]))), w[l]);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor discriminator_loss(const Tensor& logits_real, const Tensor& logits_fake) {
  return add(mean(softplus(scale(logits_real, -1.0))), mean(softplus(logits_fake)));
}

LossBreakdown generator_loss(const Tensor& hr, const Tensor& sr, const Tensor& logits_fake,
                             const LossWeights& w, const PerceptualExtractor& ex) {
  LossBreakdown out;
  out.pixel = pixel_loss(hr, sr);
  out.perceptual = perceptual_loss(hr, sr, ex);
  out.content = w.lambda_perc * out.perceptual.item() + w.lambda_pix * out.pixel.item();
  out.total = add(scale(out.perceptual, w.lambda_perc), scale(out.pixel, w.lambda_pix));
  if (logits_fake.defined()) {
    out.adversarial = adversarial_loss_g(logits_fake);
    out.total = add(out.total, scale(out.adversarial, w.lambda_adv));
  }
  return out;
}

Tensor content_loss(const Tensor& hr, const Tensor& sr, const PerceptualExtractor& ex,
                    const LossWeights& w) {
  return add(scale(perceptual_loss(hr, sr, ex), w.lambda_perc), scale(pixel_loss(hr, sr), w.lambda_pix));
}

}  // namespace ckan
