#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ckan/tensor.h"

namespace ckan {

// Three-channel image with values in [0, 1], stored as three row-major planes.
struct ImageBuffer {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;  // [3 x height x width]

  ImageBuffer() = default;
  ImageBuffer(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), data(3 * w * h, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }

  // [1 x 3 x H x W]
  Tensor to_tensor() const;
  // Accepts [3 x H x W] or [1 x 3 x H x W]; values are clamped to [0, 1].
  static ImageBuffer from_tensor(const Tensor& t);

  ImageBuffer crop(std::size_t x, std::size_t y, std::size_t w, std::size_t h) const;
};

// Binary PPM (P6, maxval 255). Values are rounded to 8 bits on save and
// divided by 255 on load.
ImageBuffer load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const ImageBuffer& img);
std::string encode_ppm(const ImageBuffer& img);
ImageBuffer decode_ppm(const std::string& bytes);

// Separable cubic convolution (a = -0.5) with clamped borders. When shrinking,
// the kernel is widened by the scale factor. Output clamped to [0, 1].
ImageBuffer bicubic_resample(const ImageBuffer& img, std::size_t new_w, std::size_t new_h);

// Square normalized Gaussian kernel of side 2 * radius + 1.
std::vector<double> gaussian_kernel(double sigma, std::size_t radius);

struct DegradeOptions {
  // Square odd-sided kernel, row-major; empty for no blur.
  std::vector<double> blur;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

// Same-size convolution with clamped borders.
ImageBuffer convolve(const ImageBuffer& img, const std::vector<double>& kernel);

// Optional blur, bicubic to 1/s, optional seeded Gaussian noise, clamp.
// Throws ConfigError when the size is not divisible by s.
ImageBuffer degrade(const ImageBuffer& hr, std::size_t s, const DegradeOptions& opts = {});

struct PatchPair {
  ImageBuffer hr;
  ImageBuffer lr;
  std::size_t x = 0;  // top-left of the HR crop
  std::size_t y = 0;
  std::uint64_t noise_seed = 0;
};

// Seeded crop positions (multiples of s); each LR patch is degrade() of its
// HR crop with a per-patch noise seed.
std::vector<PatchPair> extract_patch_pairs(const ImageBuffer& hr, std::size_t s, std::size_t patch,
                                           std::size_t count, std::uint64_t seed,
                                           const DegradeOptions& opts = {});

struct ManifestEntry {
  std::filesystem::path hr;
  std::optional<std::filesystem::path> lr;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::size_t scale = 4;
  std::string split = "train";
};

// Lines are `hr_path[<TAB>lr_path]`; `#` starts a comment. `# scale=N` and
// `# split=NAME` comments set metadata. Relative paths resolve against the
// manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
// Paths are written relative to the manifest directory when possible.
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// Procedural texture blending oriented sinusoids, a rotated checkerboard and
// band-limited noise; index % 3 selects the dominant one.
ImageBuffer synth_image(std::size_t size, std::uint64_t seed, std::size_t index);

// Writes n PPM images and `manifest.txt` into dir; returns the manifest path.
std::filesystem::path synth_dataset(const std::filesystem::path& dir, std::size_t n,
                                    std::size_t size, std::uint64_t seed,
                                    const std::string& split = "train", std::size_t scale = 4);

}  // namespace ckan
