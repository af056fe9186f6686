#include "ckan/metrics.h"

#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "ckan/errors.h"
#include "ckan/ops.h"

namespace ckan {

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr std::array<double, 5> kMsWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
  double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

Plane plane_of(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects [H x W], got " + shape_str(t.shape()));
  const auto v = t.values();
  return Plane{t.dim(0), t.dim(1), std::vector<double>(v.begin(), v.end())};
}

const std::array<double, kWindow>& gaussian_taps() {
  static const std::array<double, kWindow> taps = [] {
    std::array<double, kWindow> t{};
    double s = 0.0;
    for (std::size_t i = 0; i < kWindow; ++i) {
      const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
      t[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
      s += t[i];
    }
    for (auto& x : t) x /= s;
    return t;
  }();
  return taps;
}

// Separable valid-region filtering.
Plane filter_valid(const Plane& p) {
  const auto& g = gaussian_taps();
  const std::size_t ow = p.w - kWindow + 1, oh = p.h - kWindow + 1;
  Plane tmp{p.h, ow, std::vector<double>(p.h * ow)};
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * p.v[y * p.w + x + k];
      tmp.v[y * ow + x] = s;
    }
  Plane out{oh, ow, std::vector<double>(oh * ow)};
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * tmp.v[(y + k) * ow + x];
      out.v[y * ow + x] = s;
    }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out{a.h, a.w, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

struct SsimParts {
  double ssim = 0.0;
  double cs = 0.0;  // contrast-structure term alone
};

SsimParts ssim_parts(const Plane& a, const Plane& b, double max_val) {
  if (a.h < kWindow || a.w < kWindow) {
    throw DimensionError("SSIM needs images of at least 11x11, got " + std::to_string(a.h) + "x" +
                         std::to_string(a.w));
  }
  const double c1 = (0.01 * max_val) * (0.01 * max_val);
  const double c2 = (0.03 * max_val) * (0.03 * max_val);
  const Plane mu_a = filter_valid(a), mu_b = filter_valid(b);
  const Plane e_aa = filter_valid(product(a, a)), e_bb = filter_valid(product(b, b));
  const Plane e_ab = filter_valid(product(a, b));
  double s_sum = 0.0, cs_sum = 0.0;
  const std::size_t n = mu_a.v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = e_aa.v[i] - ma * ma;
    const double vb = e_bb.v[i] - mb * mb;
    const double cov = e_ab.v[i] - ma * mb;
    const double cs = (2.0 * cov + c2) / (va + vb + c2);
    const double l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    s_sum += l * cs;
    cs_sum += cs;
  }
  return {s_sum / static_cast<double>(n), cs_sum / static_cast<double>(n)};
}

Plane downsample2(const Plane& p) {
  const std::size_t h = p.h / 2, w = p.w / 2;
  Plane out{h, w, std::vector<double>(h * w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out.v[y * w + x] = 0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) +
                                 p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1));
  return out;
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

Tensor as_batch(const Tensor& rgb) {
  if (rgb.rank() == 3 && rgb.dim(0) == 3) return reshape(rgb, {1, 3, rgb.dim(1), rgb.dim(2)});
  if (rgb.rank() == 4 && rgb.dim(1) == 3) return rgb;
  throw DimensionError("expected an RGB image, got " + shape_str(rgb.shape()));
}

}  // namespace

Tensor to_luminance(const Tensor& rgb) {
  std::size_t h = 0, w = 0;
  if (rgb.rank() == 3 && rgb.dim(0) == 3) {
    h = rgb.dim(1);
    w = rgb.dim(2);
  } else if (rgb.rank() == 4 && rgb.dim(0) == 1 && rgb.dim(1) == 3) {
    h = rgb.dim(2);
    w = rgb.dim(3);
  } else {
    throw DimensionError("to_luminance expects 3 channels, got " + shape_str(rgb.shape()));
  }
  const auto v = rgb.values();
  const std::size_t n = h * w;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.299 * v[i] + 0.587 * v[n + i] + 0.114 * v[2 * n + i];
  return Tensor({h, w}, std::move(y));
}

PsnrResult psnr(const Tensor& a, const Tensor& b, double max_val) {
  require_same(a, b, "psnr");
  if (!(max_val > 0.0)) throw ConfigError("psnr: max value must be positive");
  const auto va = a.values(), vb = b.values();
  if (va.empty()) throw DimensionError("psnr of empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(va.size());
  if (mse == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(max_val * max_val / mse), false};
}

double ssim(const Tensor& a, const Tensor& b, double max_val) {
  require_same(a, b, "ssim");
  return ssim_parts(plane_of(a, "ssim"), plane_of(b, "ssim"), max_val).ssim;
}

std::size_t ms_ssim_scales(std::size_t h, std::size_t w) {
  std::size_t m = 0;
  while (m < kMsWeights.size() && h >= kWindow && w >= kWindow) {
    ++m;
    h /= 2;
    w /= 2;
  }
  return m;
}

double ms_ssim(const Tensor& a, const Tensor& b, double max_val) {
  require_same(a, b, "ms_ssim");
  Plane pa = plane_of(a, "ms_ssim"), pb = plane_of(b, "ms_ssim");
  const std::size_t m = ms_ssim_scales(pa.h, pa.w);
  if (m == 0) {
    throw DimensionError("MS-SSIM needs images of at least 11x11, got " + std::to_string(pa.h) +
                         "x" + std::to_string(pa.w));
  }
  double wsum = 0.0;
  for (std::size_t j = 0; j < m; ++j) wsum += kMsWeights[j];
  double result = 1.0;
  for (std::size_t j = 0; j < m; ++j) {
    const SsimParts parts = ssim_parts(pa, pb, max_val);
    const double wj = m == 1 ? 1.0 : kMsWeights[j] / wsum;
    if (j + 1 == m) {
      result *= m == 1 ? parts.ssim : std::pow(std::max(parts.ssim, 0.0), wj);
    } else {
      result *= std::pow(std::max(parts.cs, 0.0), wj);
      pa = downsample2(pa);
      pb = downsample2(pb);
    }
  }
  return result;
}

double perceptual_distance(const Tensor& a, const Tensor& b, const PerceptualExtractor& ex) {
  require_same(a, b, "perceptual_distance");
  NoGradGuard guard;
  return perceptual_loss(as_batch(a), as_batch(b), ex).item();
}

MetricRow mean_row(const std::vector<MetricRow>& rows) {
  MetricRow m;
  m.image = "MEAN";
  if (rows.empty()) return m;
  bool any_identical = false;
  for (const auto& r : rows) {
    m.psnr_y += r.psnr_y;
    m.ssim_y += r.ssim_y;
    m.msssim_y += r.msssim_y;
    m.perc_dist += r.perc_dist;
    any_identical = any_identical || r.identical;
  }
  const double n = static_cast<double>(rows.size());
  m.psnr_y = any_identical ? std::numeric_limits<double>::infinity() : m.psnr_y / n;
  m.identical = any_identical;
  m.ssim_y /= n;
  m.msssim_y /= n;
  m.perc_dist /= n;
  return m;
}

MetricReport evaluate_set(const std::vector<EvalPair>& pairs, const PerceptualExtractor& ex) {
  if (pairs.empty()) throw ConfigError("evaluate_set: empty image set");
  MetricReport report;
  for (const auto& p : pairs) {
    require_same(p.reference, p.test, ("evaluate_set(" + p.name + ")").c_str());
    const Tensor ya = to_luminance(p.reference), yb = to_luminance(p.test);
    MetricRow row;
    row.image = p.name;
    const PsnrResult pr = psnr(ya, yb);
    row.psnr_y = pr.db;
    row.identical = pr.identical;
    row.ssim_y = ssim(ya, yb);
    row.msssim_y = ms_ssim(ya, yb);
    row.perc_dist = perceptual_distance(p.reference, p.test, ex);
    report.rows.push_back(row);
  }
  report.mean = mean_row(report.rows);
  return report;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_row(std::ostream& out, const MetricRow& r) {
  out << r.image << ',' << fmt(r.psnr_y) << ',' << fmt(r.ssim_y) << ',' << fmt(r.msssim_y) << ','
      << fmt(r.perc_dist) << '\n';
}

double parse_number(const std::string& s, std::size_t line) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ParseError("metrics CSV line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

void write_csv(std::ostream& out, const MetricReport& report) {
  out << "image,psnr_y,ssim_y,msssim_y,perc_dist\n";
  for (const auto& r : report.rows) write_row(out, r);
  write_row(out, report.mean);
}

MetricReport read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "image,psnr_y,ssim_y,msssim_y,perc_dist") {
    throw ParseError("metrics CSV: missing header");
  }
  MetricReport report;
  bool have_mean = false;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw ParseError("metrics CSV line " + std::to_string(n) + ": expected 5 fields");
    MetricRow r;
    r.image = cells[0];
    r.psnr_y = parse_number(cells[1], n);
    r.identical = std::isinf(r.psnr_y);
    r.ssim_y = parse_number(cells[2], n);
    r.msssim_y = parse_number(cells[3], n);
    r.perc_dist = parse_number(cells[4], n);
    if (r.image == "MEAN") {
      report.mean = r;
      have_mean = true;
    } else {
      if (have_mean) throw ParseError("metrics CSV: rows after MEAN");
      report.rows.push_back(r);
    }
  }
  if (!have_mean) throw ParseError("metrics CSV: missing MEAN row");
  return report;
}

}  // namespace ckan
