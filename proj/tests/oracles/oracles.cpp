#include "oracles.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ckan::oracle {

std::vector<double> direct_conv(const Tensor& x, const std::vector<double>& w, const std::vector<double>& bias,
                                const CkanConfig& cfg) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t kh = cfg.kernel[0], kw = cfg.kernel[1];
  const long long ho = (static_cast<long long>(H) + 2 * cfg.padding[0] - cfg.dilation[0] * (kh - 1) - 1) /
                           static_cast<long long>(cfg.stride[0]) + 1;
  const long long wo = (static_cast<long long>(W) + 2 * cfg.padding[1] - cfg.dilation[1] * (kw - 1) - 1) /
                           static_cast<long long>(cfg.stride[1]) + 1;
  const auto xv = x.values();
  std::vector<double> y(B * cfg.c_out * ho * wo, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < cfg.c_out; ++o)
      for (long long i = 0; i < ho; ++i)
        for (long long j = 0; j < wo; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long long r = i * static_cast<long long>(cfg.stride[0]) -
                                    static_cast<long long>(cfg.padding[0]) + static_cast<long long>(u * cfg.dilation[0]);
                const long long q = j * static_cast<long long>(cfg.stride[1]) -
                                    static_cast<long long>(cfg.padding[1]) + static_cast<long long>(v * cfg.dilation[1]);
                if (r < 0 || q < 0 || r >= static_cast<long long>(H) || q >= static_cast<long long>(W)) continue;
                acc += w[o * C * kh * kw + (c * kh + u) * kw + v] * xv[((b * C + c) * H + r) * W + q];
              }
          y[((b * cfg.c_out + o) * ho + i) * wo + j] = acc;
        }
  return y;
}

std::vector<double> gather_patches(const Tensor& x, const CkanConfig& cfg) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t kh = cfg.kernel[0], kw = cfg.kernel[1];
  const std::size_t ho = (H + 2 * cfg.padding[0] - cfg.dilation[0] * (kh - 1) - 1) / cfg.stride[0] + 1;
  const std::size_t wo = (W + 2 * cfg.padding[1] - cfg.dilation[1] * (kw - 1) - 1) / cfg.stride[1] + 1;
  const std::size_t K = C * kh * kw, L = ho * wo;
  const auto xv = x.values();
  std::vector<double> u(B * K * L, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t e = 0; e < kw; ++e) {
              const long long r = static_cast<long long>(i * cfg.stride[0] + a * cfg.dilation[0]) -
                                  static_cast<long long>(cfg.padding[0]);
              const long long q = static_cast<long long>(j * cfg.stride[1] + e * cfg.dilation[1]) -
                                  static_cast<long long>(cfg.padding[1]);
              const std::size_t k = (c * kh + a) * kw + e;
              const std::size_t l = i * wo + j;
              double v = 0.0;
              if (r >= 0 && q >= 0 && r < static_cast<long long>(H) && q < static_cast<long long>(W)) {
                v = xv[((b * C + c) * H + static_cast<std::size_t>(r)) * W + static_cast<std::size_t>(q)];
              }
              u[(b * K + k) * L + l] = v;
            }
  return u;
}

std::vector<double> cox_de_boor_all(const std::vector<double>& t, int p, double x) {
  const std::size_t n = t.size() - static_cast<std::size_t>(p) - 1;
  // degree 0
  std::vector<double> N(t.size() - 1, 0.0);
  const double last = t.back();
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    if (t[i] < t[i + 1] && ((x >= t[i] && x < t[i + 1]) || (x == last && t[i + 1] == last))) N[i] = 1.0;
  }
  for (int d = 1; d <= p; ++d) {
    std::vector<double> M(t.size() - 1 - static_cast<std::size_t>(d), 0.0);
    for (std::size_t i = 0; i < M.size(); ++i) {
      double left = 0.0, right = 0.0;
      const double dl = t[i + d] - t[i];
      const double dr = t[i + d + 1] - t[i + 1];
      if (dl != 0.0) left = (x - t[i]) / dl * N[i];
      if (dr != 0.0) right = (t[i + d + 1] - x) / dr * N[i + 1];
      M[i] = left + right;
    }
    N = std::move(M);
  }
  N.resize(n);
  return N;
}

GradCheck check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt, double step,
                          std::size_t max_entries, double floor) {
  for (auto t : wrt) t.zero_grad();
  Tensor l = loss();
  l.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : wrt) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }
  GradCheck out;
  NoGradGuard guard;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor t = wrt[ti];
    const std::size_t n = t.numel();
    const std::size_t count = std::min(n, max_entries);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = count == n ? k : (k * n) / count + (n / count) / 2;
      const double orig = t.values()[idx];
      t.mutable_values()[idx] = orig + step;
      const double fp = loss().item();
      t.mutable_values()[idx] = orig - step;
      const double fm = loss().item();
      t.mutable_values()[idx] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[ti][idx];
      const double rel = std::abs(a - numeric) / std::max(floor, std::abs(a));
      ++out.checked;
      if (rel > out.max_rel_err || !std::isfinite(rel)) {
        out.max_rel_err = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        std::ostringstream ss;
        ss << "tensor " << ti << " entry " << idx << ": analytic " << a << " numeric " << numeric;
        out.worst = ss.str();
      }
    }
  }
  for (auto t : wrt) t.zero_grad();
  return out;
}

std::vector<double> materialize_naive(const FactorizedLinear& f) {
  std::vector<double> w(f.d_out() * f.d_in(), 0.0);
  const auto a = f.coefficients().values();
  for (std::size_t j = 0; j < f.rank_p(); ++j)
    for (std::size_t k = 0; k < f.rank_s(); ++k) {
      const Tensor m = f.basis(j, k);
      const auto mv = m.values();
      for (std::size_t e = 0; e < w.size(); ++e) w[e] += a[j * f.rank_s() + k] * mv[e];
    }
  return w;
}

std::vector<double> kan_layer_scalar(const std::vector<double>& x, std::size_t n, const KanLayer& layer) {
  const std::size_t di = layer.d_in, dout = layer.d_out;
  const auto w = materialize_naive(layer.linear);
  const auto alpha = layer.alpha.values();
  const auto gain = layer.gain.values();
  const auto bias = layer.bias.values();
  const std::size_t nb = layer.grid.num_basis();
  std::vector<double> y(n * dout);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> u(dout, 0.0);
    for (std::size_t i = 0; i < di; ++i) {
      const double xi = x[r * di + i];
      const double s = xi / (1.0 + std::exp(-xi));
      const double xc = std::min(std::max(xi, layer.grid.lo()), layer.grid.hi());
      const auto basis = cox_de_boor_all(layer.grid.knots(), layer.grid.degree(), xc);
      for (std::size_t o = 0; o < dout; ++o) {
        u[o] += w[o * di + i] * s;
        for (std::size_t m = 0; m < nb; ++m) u[o] += alpha[(i * nb + m) * dout + o] * basis[m];
      }
    }
    double mu = 0.0;
    for (double v : u) mu += v;
    mu /= static_cast<double>(dout);
    double var = 0.0;
    for (double v : u) var += (v - mu) * (v - mu);
    var /= static_cast<double>(dout);
    for (std::size_t o = 0; o < dout; ++o)
      y[r * dout + o] = (u[o] - mu) / std::sqrt(var + layer.eps) * gain[o] + bias[o];
  }
  return y;
}

double psnr_loop(const std::vector<double>& a, const std::vector<double>& b, double max_val) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = s / static_cast<double>(a.size());
  return 10.0 * std::log10(max_val * max_val / mse);
}

namespace {

struct Terms {
  double ssim = 0.0;
  double cs = 0.0;
};

Terms window_terms(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w,
                   double max_val) {
  constexpr int R = 5;
  double g[11][11];
  double gs = 0.0;
  for (int y = -R; y <= R; ++y)
    for (int x = -R; x <= R; ++x) {
      g[y + R][x + R] = std::exp(-(x * x + y * y) / (2.0 * 1.5 * 1.5));
      gs += g[y + R][x + R];
    }
  for (auto& row : g)
    for (double& v : row) v /= gs;
  const double c1 = std::pow(0.01 * max_val, 2), c2 = std::pow(0.03 * max_val, 2);
  Terms total;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + 11 <= h; ++y0)
    for (std::size_t x0 = 0; x0 + 11 <= w; ++x0) {
      double ma = 0, mb = 0;
      for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
          ma += g[y][x] * a[(y0 + y) * w + x0 + x];
          mb += g[y][x] * b[(y0 + y) * w + x0 + x];
        }
      double va = 0, vb = 0, cov = 0;
      for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
          const double da = a[(y0 + y) * w + x0 + x] - ma, db = b[(y0 + y) * w + x0 + x] - mb;
          va += g[y][x] * da * da;
          vb += g[y][x] * db * db;
          cov += g[y][x] * da * db;
        }
      const double cs = (2 * cov + c2) / (va + vb + c2);
      total.cs += cs;
      total.ssim += (2 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs;
      ++count;
    }
  total.ssim /= static_cast<double>(count);
  total.cs /= static_cast<double>(count);
  return total;
}

}  // namespace

double ssim_direct(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w,
                   double max_val) {
  return window_terms(a, b, h, w, max_val).ssim;
}

double cs_direct(const std::vector<double>& a, const std::vector<double>& b, std::size_t h, std::size_t w,
                 double max_val) {
  return window_terms(a, b, h, w, max_val).cs;
}

double ms_ssim_direct(std::vector<double> a, std::vector<double> b, std::size_t h, std::size_t w, double max_val) {
  static const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  std::size_t m = 0;
  for (std::size_t hh = h, ww = w; m < 5 && hh >= 11 && ww >= 11; hh /= 2, ww /= 2) ++m;
  double wsum = 0.0;
  for (std::size_t j = 0; j < m; ++j) wsum += weights[j];
  double out = 1.0;
  for (std::size_t j = 0; j < m; ++j) {
    const Terms t = window_terms(a, b, h, w, max_val);
    if (m == 1) return t.ssim;
    const double wj = weights[j] / wsum;
    if (j + 1 == m) {
      out *= std::pow(std::max(t.ssim, 0.0), wj);
      break;
    }
    out *= std::pow(std::max(t.cs, 0.0), wj);
    const std::size_t h2 = h / 2, w2 = w / 2;
    std::vector<double> a2(h2 * w2), b2(h2 * w2);
    for (std::size_t y = 0; y < h2; ++y)
      for (std::size_t x = 0; x < w2; ++x) {
        a2[y * w2 + x] = 0.25 * (a[2 * y * w + 2 * x] + a[2 * y * w + 2 * x + 1] + a[(2 * y + 1) * w + 2 * x] +
                                 a[(2 * y + 1) * w + 2 * x + 1]);
        b2[y * w2 + x] = 0.25 * (b[2 * y * w + 2 * x] + b[2 * y * w + 2 * x + 1] + b[(2 * y + 1) * w + 2 * x] +
                                 b[(2 * y + 1) * w + 2 * x + 1]);
      }
    a = std::move(a2);
    b = std::move(b2);
    h = h2;
    w = w2;
  }
  return out;
}

}  // namespace ckan::oracle
