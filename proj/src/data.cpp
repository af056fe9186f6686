#include "ckan/data.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ckan/errors.h"
#include "ckan/parameters.h"

namespace ckan {

namespace fs = std::filesystem;

Tensor ImageBuffer::to_tensor() const { return Tensor({1, 3, height, width}, data); }

ImageBuffer ImageBuffer::from_tensor(const Tensor& t) {
  std::size_t h = 0, w = 0;
  if (t.rank() == 3 && t.dim(0) == 3) {
    h = t.dim(1);
    w = t.dim(2);
  } else if (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 3) {
    h = t.dim(2);
    w = t.dim(3);
  } else {
    throw DimensionError("image tensor must be [3 x H x W] or [1 x 3 x H x W], got " + shape_str(t.shape()));
  }
  ImageBuffer img(w, h);
  const auto v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) img.data[i] = std::clamp(v[i], 0.0, 1.0);
  return img;
}

ImageBuffer ImageBuffer::crop(std::size_t x, std::size_t y, std::size_t w, std::size_t h) const {
  if (x + w > width || y + h > height) throw DimensionError("crop outside the image");
  ImageBuffer out(w, h);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w; ++q) out.at(c, r, q) = at(c, y + r, x + q);
  return out;
}

std::string encode_ppm(const ImageBuffer& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t plane = img.width * img.height;
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(img.data[c * plane + i], 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  return out;
}

namespace {

// Next whitespace-delimited header token, skipping `#` comments.
std::string header_token(const std::string& s, std::size_t& pos) {
  for (;;) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos < s.size() && s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (start == pos) throw ParseError("PPM: truncated header");
  return s.substr(start, pos - start);
}

std::size_t header_number(const std::string& s, std::size_t& pos, const char* what) {
  const std::string tok = header_token(s, pos);
  if (tok.empty() || tok.size() > 9 || !std::all_of(tok.begin(), tok.end(), ::isdigit)) {
    throw ParseError(std::string("PPM: bad ") + what + " '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

ImageBuffer decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  if (bytes.size() < 2 || bytes.compare(0, 2, "P6") != 0) throw ParseError("PPM: unsupported magic (expected P6)");
  pos = 2;
  const std::size_t w = header_number(bytes, pos, "width");
  const std::size_t h = header_number(bytes, pos, "height");
  const std::size_t maxval = header_number(bytes, pos, "maxval");
  if (w == 0 || h == 0) throw ParseError("PPM: zero image size");
  if (maxval != 255) throw ParseError("PPM: only 8-bit (maxval 255) images are supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ParseError("PPM: missing separator after header");
  }
  ++pos;
  const std::size_t plane = w * h;
  if (bytes.size() - pos < 3 * plane) throw ParseError("PPM: truncated pixel data");
  ImageBuffer img(w, h);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.data[c * plane + i] = static_cast<unsigned char>(bytes[pos + 3 * i + c]) / 255.0;
  return img;
}

ImageBuffer load_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_ppm(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_image(const fs::path& path, const ImageBuffer& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = encode_ppm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::vector<std::size_t> begin;  // per output: offset into idx/w
  std::vector<std::size_t> idx;
  std::vector<double> w;
};

Taps resample_taps(std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(out) / static_cast<double>(in);
  const double stretch = scale < 1.0 ? 1.0 / scale : 1.0;
  const double support = 2.0 * stretch;
  Taps t;
  for (std::size_t o = 0; o < out; ++o) {
    t.begin.push_back(t.idx.size());
    const double center = (static_cast<double>(o) + 0.5) / scale - 0.5;
    const auto lo = static_cast<long long>(std::floor(center - support));
    const auto hi = static_cast<long long>(std::ceil(center + support));
    double sum = 0.0;
    const std::size_t first = t.w.size();
    for (long long k = lo; k <= hi; ++k) {
      const double wk = cubic((static_cast<double>(k) - center) / stretch);
      if (wk == 0.0) continue;
      t.idx.push_back(static_cast<std::size_t>(std::clamp<long long>(k, 0, static_cast<long long>(in) - 1)));
      t.w.push_back(wk);
      sum += wk;
    }
    for (std::size_t i = first; i < t.w.size(); ++i) t.w[i] /= sum;
  }
  t.begin.push_back(t.idx.size());
  return t;
}

}  // namespace

ImageBuffer bicubic_resample(const ImageBuffer& img, std::size_t new_w, std::size_t new_h) {
  if (new_w == 0 || new_h == 0) throw ConfigError("resample target must be at least 1x1");
  if (img.width == 0 || img.height == 0) throw DimensionError("resample of an empty image");
  const Taps tx = resample_taps(img.width, new_w);
  const Taps ty = resample_taps(img.height, new_h);
  ImageBuffer out(new_w, new_h);
  std::vector<double> rows(img.height * new_w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < new_w; ++x) {
        double s = 0.0;
        for (std::size_t i = tx.begin[x]; i < tx.begin[x + 1]; ++i) s += tx.w[i] * img.at(c, y, tx.idx[i]);
        rows[y * new_w + x] = s;
      }
    for (std::size_t y = 0; y < new_h; ++y)
      for (std::size_t x = 0; x < new_w; ++x) {
        double s = 0.0;
        for (std::size_t i = ty.begin[y]; i < ty.begin[y + 1]; ++i) s += ty.w[i] * rows[ty.idx[i] * new_w + x];
        out.at(c, y, x) = std::clamp(s, 0.0, 1.0);
      }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  if (!(sigma > 0.0)) throw ConfigError("blur sigma must be positive");
  const std::size_t side = 2 * radius + 1;
  std::vector<double> k(side * side);
  double sum = 0.0;
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double dy = static_cast<double>(y) - static_cast<double>(radius);
      const double dx = static_cast<double>(x) - static_cast<double>(radius);
      k[y * side + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      sum += k[y * side + x];
    }
  for (auto& v : k) v /= sum;
  return k;
}

ImageBuffer convolve(const ImageBuffer& img, const std::vector<double>& kernel) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(kernel.size()))));
  if (side * side != kernel.size() || side % 2 == 0) throw ConfigError("blur kernel must be square with odd side");
  const auto r = static_cast<long long>(side / 2);
  const auto h = static_cast<long long>(img.height), w = static_cast<long long>(img.width);
  ImageBuffer out(img.width, img.height);
  for (std::size_t c = 0; c < 3; ++c)
    for (long long y = 0; y < h; ++y)
      for (long long x = 0; x < w; ++x) {
        double s = 0.0;
        for (long long ky = -r; ky <= r; ++ky)
          for (long long kx = -r; kx <= r; ++kx) {
            const auto sy = static_cast<std::size_t>(std::clamp(y - ky, 0LL, h - 1));
            const auto sx = static_cast<std::size_t>(std::clamp(x - kx, 0LL, w - 1));
            s += kernel[static_cast<std::size_t>((ky + r) * static_cast<long long>(side) + kx + r)] *
                 img.at(c, sy, sx);
          }
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = s;
      }
  return out;
}

ImageBuffer degrade(const ImageBuffer& hr, std::size_t s, const DegradeOptions& opts) {
  if (s == 0) throw ConfigError("scale must be positive");
  if (hr.width % s != 0 || hr.height % s != 0) {
    throw ConfigError("image size " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                      " is not divisible by scale " + std::to_string(s));
  }
  if (opts.noise_sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
  ImageBuffer lr = bicubic_resample(opts.blur.empty() ? hr : convolve(hr, opts.blur), hr.width / s,
                                    hr.height / s);
  if (opts.noise_sigma > 0.0) {
    Rng rng(opts.noise_seed);
    for (auto& v : lr.data) v = std::clamp(v + rng.normal(0.0, opts.noise_sigma), 0.0, 1.0);
  }
  return lr;
}

std::vector<PatchPair> extract_patch_pairs(const ImageBuffer& hr, std::size_t s, std::size_t patch,
                                           std::size_t count, std::uint64_t seed,
                                           const DegradeOptions& opts) {
  if (s == 0 || patch == 0 || patch % s != 0) {
    throw ConfigError("patch size " + std::to_string(patch) + " must be a positive multiple of scale " +
                      std::to_string(s));
  }
  if (hr.width < patch || hr.height < patch) {
    throw ConfigError("image " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                      " is smaller than patch " + std::to_string(patch));
  }
  Rng rng(seed);
  const std::size_t nx = (hr.width - patch) / s + 1;
  const std::size_t ny = (hr.height - patch) / s + 1;
  std::vector<PatchPair> out;
  for (std::size_t k = 0; k < count; ++k) {
    PatchPair p;
    p.x = rng.index(nx) * s;
    p.y = rng.index(ny) * s;
    p.noise_seed = derive_seed(seed, 0x4E4F495345, k);
    p.hr = hr.crop(p.x, p.y, patch, patch);
    DegradeOptions o = opts;
    o.noise_seed = p.noise_seed;
    p.lr = degrade(p.hr, s, o);
    out.push_back(std::move(p));
  }
  return out;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  DatasetManifest m;
  std::string line;
  std::size_t n = 0;
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = line.substr(line.find_first_not_of("# ") == std::string::npos
                                               ? line.size()
                                               : line.find_first_not_of("# "));
      if (body.rfind("scale=", 0) == 0) {
        try {
          m.scale = std::stoul(body.substr(6));
        } catch (const std::exception&) {
          throw ParseError(path.string() + ":" + std::to_string(n) + ": bad scale");
        }
      } else if (body.rfind("split=", 0) == 0) {
        m.split = body.substr(6);
      }
      continue;
    }
    ManifestEntry e;
    const auto tab = line.find('\t');
    e.hr = resolve(line.substr(0, tab));
    if (tab != std::string::npos) {
      const std::string lr = line.substr(tab + 1);
      if (lr.empty() || lr.find('\t') != std::string::npos) {
        throw ParseError(path.string() + ":" + std::to_string(n) + ": expected hr_path[<TAB>lr_path]");
      }
      e.lr = resolve(lr);
    }
    if (!fs::exists(e.hr)) throw IoError(path.string() + ":" + std::to_string(n) + ": missing " + e.hr.string());
    if (e.lr && !fs::exists(*e.lr)) {
      throw IoError(path.string() + ":" + std::to_string(n) + ": missing " + e.lr->string());
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw ParseError("manifest " + path.string() + " lists no images");
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  auto rel = [&](const fs::path& p) {
    std::error_code ec;
    const fs::path r = fs::relative(p, base, ec);
    return (ec || r.empty()) ? p.generic_string() : r.generic_string();
  };
  out << "# scale=" << m.scale << "\n# split=" << m.split << "\n";
  for (const auto& e : m.entries) {
    out << rel(e.hr);
    if (e.lr) out << '\t' << rel(*e.lr);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

void fill_sinusoids(ImageBuffer& img, Rng& rng) {
  struct Wave {
    double kx, ky, phase;
    double amp[3];
  };
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double period = rng.uniform(8.0, 28.0);
    const double k = 2.0 * std::numbers::pi / period;
    w.kx = k * std::cos(theta);
    w.ky = k * std::sin(theta);
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (double& a : w.amp) a = rng.uniform(0.05, 0.18);
  }
  double base[3];
  for (double& b : base) b = rng.uniform(0.35, 0.65);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = base[c];
        for (const auto& w : waves) v += w.amp[c] * std::sin(w.kx * x + w.ky * y + w.phase);
        img.at(c, y, x) = v;
      }
}

void fill_checkerboard(ImageBuffer& img, Rng& rng) {
  const double theta = rng.uniform(0.0, std::numbers::pi / 2);
  const double cell = rng.uniform(8.0, 20.0);
  const double ct = std::cos(theta), st = std::sin(theta);
  double ca[3], cb[3];
  for (std::size_t c = 0; c < 3; ++c) {
    ca[c] = rng.uniform(0.05, 0.45);
    cb[c] = rng.uniform(0.55, 0.95);
  }
  const double ox = rng.uniform(0.0, cell), oy = rng.uniform(0.0, cell);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double u = (ct * x + st * y + ox) / cell;
      const double v = (-st * x + ct * y + oy) / cell;
      const bool odd = (static_cast<long long>(std::floor(u)) + static_cast<long long>(std::floor(v))) & 1;
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = odd ? ca[c] : cb[c];
    }
}

void fill_noise(ImageBuffer& img, Rng& rng) {
  ImageBuffer raw(img.width, img.height);
  for (auto& v : raw.data) v = rng.normal(0.0, 1.0);
  const double sigma = rng.uniform(1.0, 2.0);
  ImageBuffer smooth = convolve(raw, gaussian_kernel(sigma, static_cast<std::size_t>(std::ceil(3.0 * sigma))));
  double lo = 1e300, hi = -1e300;
  for (double v : smooth.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.1 + 0.8 * (smooth.data[i] - lo) / span;
}

}  // namespace

ImageBuffer synth_image(std::size_t size, std::uint64_t seed, std::size_t index) {
  if (size == 0) throw ConfigError("image size must be positive");
  Rng rng(derive_seed(seed, 0x53594E, index));
  ImageBuffer layers[3] = {ImageBuffer(size, size), ImageBuffer(size, size), ImageBuffer(size, size)};
  fill_sinusoids(layers[0], rng);
  fill_checkerboard(layers[1], rng);
  fill_noise(layers[2], rng);
  // index % 3 picks the dominant texture
  double w[3] = {0.2, 0.2, 0.2};
  w[index % 3] = 0.6;
  ImageBuffer img(size, size);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = w[0] * layers[0].data[i] + w[1] * layers[1].data[i] + w[2] * layers[2].data[i];
    img.data[i] = std::clamp(v, 0.0, 1.0);
  }
  return img;
}

fs::path synth_dataset(const fs::path& dir, std::size_t n, std::size_t size, std::uint64_t seed,
                       const std::string& split, std::size_t scale) {
  if (n == 0) throw ConfigError("synth: n must be >= 1");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.scale = scale;
  m.split = split;
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03zu.ppm", i);
    const fs::path p = dir / name;
    save_image(p, synth_image(size, seed, i));
    m.entries.push_back({p, std::nullopt});
  }
  const fs::path manifest = dir / "manifest.txt";
  save_manifest(manifest, m);
  return manifest;
}

}  // namespace ckan
