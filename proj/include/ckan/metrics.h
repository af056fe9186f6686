#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ckan/objectives.h"
#include "ckan/tensor.h"

namespace ckan {

// Y = 0.299 R + 0.587 G + 0.114 B for [3 x H x W] or [1 x 3 x H x W] input.
// Returns [H x W].
Tensor to_luminance(const Tensor& rgb);

struct PsnrResult {
  double db = 0.0;  // +inf when identical
  bool identical = false;
};

// 10 log10(max^2 / MSE) over equal-shaped tensors.
PsnrResult psnr(const Tensor& a, const Tensor& b, double max_val = 1.0);

// Mean SSIM over the valid region of an 11x11 Gaussian window (sigma 1.5).
// Inputs are [H x W].
double ssim(const Tensor& a, const Tensor& b, double max_val = 1.0);

// Number of dyadic scales used by ms_ssim for an h x w image: the largest
// M <= 5 whose coarsest scale still fits the window.
std::size_t ms_ssim_scales(std::size_t h, std::size_t w);
// Multi-scale SSIM with the standard five weights, renormalized over the
// scales that fit. Equals ssim() when one scale fits.
double ms_ssim(const Tensor& a, const Tensor& b, double max_val = 1.0);

// sum_l w_l mean (phi_l(a) - phi_l(b))^2 with the seeded extractor, on RGB
// input ([3 x H x W] or [1 x 3 x H x W]).
double perceptual_distance(const Tensor& a, const Tensor& b, const PerceptualExtractor& ex);

struct MetricRow {
  std::string image;
  double psnr_y = 0.0;
  bool identical = false;
  double ssim_y = 0.0;
  double msssim_y = 0.0;
  double perc_dist = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;  // image = "MEAN"
};

struct EvalPair {
  std::string name;
  Tensor reference;  // RGB in [0, 1]
  Tensor test;
};

// Throws ConfigError on an empty set and DimensionError on misaligned pairs.
MetricReport evaluate_set(const std::vector<EvalPair>& pairs, const PerceptualExtractor& ex);
// Arithmetic means of the rows; PSNR is +inf if any row is.
MetricRow mean_row(const std::vector<MetricRow>& rows);

// Header `image,psnr_y,ssim_y,msssim_y,perc_dist`, one row per image, then MEAN.
void write_csv(std::ostream& out, const MetricReport& report);
// Inverse of write_csv. Throws ParseError.
MetricReport read_csv(std::istream& in);

}  // namespace ckan
