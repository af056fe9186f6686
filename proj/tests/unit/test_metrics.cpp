#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "ckan/data.h"
#include "ckan/errors.h"
#include "ckan/metrics.h"
#include "oracles.h"

using namespace ckan;

namespace {

Tensor plane(std::size_t h, std::size_t w, Rng& rng) {
  Tensor x({h, w});
  for (double& v : x.mutable_values()) v = rng.uniform(0.0, 1.0);
  return x;
}

std::vector<double> flat(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Smooth random field so SSIM values sit away from zero.
Tensor smooth_plane(std::size_t h, std::size_t w, Rng& rng) {
  const double fx = rng.uniform(0.05, 0.2), fy = rng.uniform(0.05, 0.2), ph = rng.uniform(0.0, 6.0);
  Tensor x({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t q = 0; q < w; ++q)
      x.mutable_values()[y * w + q] = 0.5 + 0.3 * std::sin(fx * q + fy * y + ph) + rng.uniform(-0.05, 0.05);
  return x;
}

Tensor perturb(const Tensor& a, double sd, Rng& rng) {
  Tensor b = a.detach();
  for (double& v : b.mutable_values()) v = std::clamp(v + rng.normal(0.0, sd), 0.0, 1.0);
  return b;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("luminance") {
  Tensor rgb({3, 1, 3}, {1, 0, 0, 1, 0, 1, 1, 0, 0});
  const Tensor y = to_luminance(rgb);
  REQUIRE(y.shape() == Shape{1, 3});
  CHECK(y.values()[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(y.values()[1] == 0.0);
  CHECK(y.values()[2] == doctest::Approx(0.587).epsilon(1e-15));
  CHECK(to_luminance(Tensor({1, 3, 2, 2})).shape() == Shape{2, 2});
  CHECK_THROWS_AS(to_luminance(Tensor({2, 2, 2})), DimensionError);
}

TEST_CASE("psnr") {
  Tensor a({10, 10}, 0.5), b({10, 10}, 0.6);
  // MSE 0.01 exactly
  const PsnrResult r = psnr(a, b);
  CHECK(!r.identical);
  CHECK(std::abs(r.db - 20.0) < 1e-12);

  const PsnrResult same = psnr(a, a);
  CHECK(same.identical);
  CHECK(std::isinf(same.db));

  Rng rng(1);
  const Tensor p = plane(17, 23, rng), q = plane(17, 23, rng);
  CHECK(std::abs(psnr(p, q).db - oracle::psnr_loop(flat(p), flat(q), 1.0)) < 1e-9);
  CHECK(std::abs(psnr(p, q, 255.0).db - oracle::psnr_loop(flat(p), flat(q), 255.0)) < 1e-9);
  CHECK_THROWS_AS(psnr(p, Tensor({17, 22})), DimensionError);

  // strictly decreasing along a noise sweep
  double prev = std::numeric_limits<double>::infinity();
  for (double sd : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    Tensor n = p.detach();
    Rng nr(5);
    for (double& v : n.mutable_values()) v += sd * nr.normal();
    const double db = psnr(p, n).db;
    CHECK(db < prev);
    prev = db;
  }
}

TEST_CASE("ssim against the direct oracle") {
  Rng rng(2);
  const Tensor a = smooth_plane(24, 30, rng);
  const Tensor b = perturb(a, 0.1, rng);
  CHECK(ssim(a, a) == 1.0);
  CHECK(std::abs(ssim(a, b) - oracle::ssim_direct(flat(a), flat(b), 24, 30, 1.0)) < 1e-8);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));

  Tensor c({16, 16}, 0.2), d({16, 16}, 0.7);
  const double cd = ssim(c, d);
  CHECK(cd < 1.0);
  CHECK(std::abs(cd - oracle::ssim_direct(flat(c), flat(d), 16, 16, 1.0)) < 1e-8);

  const Tensor u = plane(20, 20, rng), v = plane(20, 20, rng);
  CHECK(std::abs(ssim(u, v) - oracle::ssim_direct(flat(u), flat(v), 20, 20, 1.0)) < 1e-8);
  CHECK_THROWS(ssim(Tensor({10, 20}), Tensor({10, 20})));
}

TEST_CASE("ms-ssim") {
  CHECK(ms_ssim_scales(176, 176) == 5);
  CHECK(ms_ssim_scales(64, 64) == 3);
  CHECK(ms_ssim_scales(11, 40) == 1);
  CHECK(ms_ssim_scales(10, 40) == 0);

  Rng rng(3);
  for (std::size_t side : {std::size_t{180}, std::size_t{64}, std::size_t{33}}) {
    const Tensor a = smooth_plane(side, side + 3, rng);
    const Tensor b = perturb(a, 0.08, rng);
    CHECK(ms_ssim(a, a) == 1.0);
    CHECK(std::abs(ms_ssim(a, b) - oracle::ms_ssim_direct(flat(a), flat(b), side, side + 3, 1.0)) < 1e-8);
  }

  const Tensor s = smooth_plane(15, 18, rng), t = perturb(s, 0.1, rng);
  CHECK(ms_ssim(s, t) == ssim(s, t));
}

TEST_CASE("ms-ssim falls with heavier blur") {
  ImageBuffer img = synth_image(64, 5, 0);
  const Tensor ref = to_luminance(img.to_tensor());
  double prev = 1.0;
  for (double sigma : {0.5, 1.0, 1.5, 2.5, 4.0}) {
    const ImageBuffer blurred = convolve(img, gaussian_kernel(sigma, static_cast<std::size_t>(std::ceil(3 * sigma))));
    const double v = ms_ssim(ref, to_luminance(blurred.to_tensor()));
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("perceptual distance") {
  Rng rng(4);
  const PerceptualExtractor ex;
  Tensor a({3, 12, 12}), b({3, 12, 12});
  for (double& v : a.mutable_values()) v = rng.uniform();
  for (double& v : b.mutable_values()) v = rng.uniform();
  CHECK(perceptual_distance(a, a, ex) == 0.0);
  const double ab = perceptual_distance(a, b, ex);
  CHECK(ab > 0.0);
  CHECK(ab == perceptual_distance(b, a, ex));
}

TEST_CASE("evaluate set and CSV round trip") {
  Rng rng(5);
  const PerceptualExtractor ex;
  auto rgb = [&](std::size_t h, std::size_t w) {
    Tensor t({1, 3, h, w});
    for (double& v : t.mutable_values()) v = rng.uniform();
    return t;
  };
  CHECK_THROWS_AS(evaluate_set({}, ex), ConfigError);

  const Tensor x = rgb(16, 16);
  const MetricReport one = evaluate_set({{"same", x, x}}, ex);
  REQUIRE(one.rows.size() == 1);
  CHECK(one.rows[0].identical);
  CHECK(std::isinf(one.rows[0].psnr_y));
  CHECK(one.rows[0].ssim_y == 1.0);
  CHECK(one.rows[0].perc_dist == 0.0);
  CHECK(one.mean.image == "MEAN");

  const Tensor a = rgb(16, 20), b = rgb(16, 20), c = rgb(16, 16), d = rgb(16, 16);
  const MetricReport rep = evaluate_set({{"a", a, b}, {"c", c, d}}, ex);
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.mean.psnr_y == doctest::Approx((rep.rows[0].psnr_y + rep.rows[1].psnr_y) / 2).epsilon(1e-15));
  CHECK(rep.mean.ssim_y == doctest::Approx((rep.rows[0].ssim_y + rep.rows[1].ssim_y) / 2).epsilon(1e-15));
  CHECK(rep.mean.msssim_y == doctest::Approx((rep.rows[0].msssim_y + rep.rows[1].msssim_y) / 2).epsilon(1e-15));
  CHECK(rep.mean.perc_dist == doctest::Approx((rep.rows[0].perc_dist + rep.rows[1].perc_dist) / 2).epsilon(1e-15));
  CHECK_THROWS_AS(evaluate_set({{"bad", a, c}}, ex), DimensionError);

  for (const MetricReport* r : {&rep, &one}) {
    std::stringstream ss;
    write_csv(ss, *r);
    const std::string text = ss.str();
    CHECK(text.rfind("image,psnr_y,ssim_y,msssim_y,perc_dist\n", 0) == 0);
    CHECK(text.find('\r') == std::string::npos);
    const MetricReport back = read_csv(ss);
    REQUIRE(back.rows.size() == r->rows.size());
    for (std::size_t i = 0; i < back.rows.size(); ++i) {
      CHECK(back.rows[i].image == r->rows[i].image);
      CHECK(back.rows[i].psnr_y == r->rows[i].psnr_y);
      CHECK(back.rows[i].identical == r->rows[i].identical);
      CHECK(back.rows[i].ssim_y == r->rows[i].ssim_y);
      CHECK(back.rows[i].msssim_y == r->rows[i].msssim_y);
      CHECK(back.rows[i].perc_dist == r->rows[i].perc_dist);
    }
    CHECK(back.mean.psnr_y == r->mean.psnr_y);
    std::stringstream again;
    write_csv(again, back);
    CHECK(again.str() == text);
  }

  std::stringstream bad("image,psnr_y,ssim_y,msssim_y,perc_dist\nx,1,2,abc,4\nMEAN,1,2,3,4\n");
  CHECK_THROWS_AS(read_csv(bad), ParseError);
}

}  // TEST_SUITE
