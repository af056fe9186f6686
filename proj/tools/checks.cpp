#include "checks.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "ckan/autograd.h"
#include "ckan/ckan_operator.h"
#include "ckan/errors.h"
#include "ckan/instrument.h"
#include "ckan/kan_layer.h"
#include "ckan/metrics.h"
#include "ckan/models.h"
#include "ckan/ops.h"
#include "ckan/parameters.h"
#include "ckan/spline.h"
#include "oracles.h"

namespace ckan::cli {
namespace {

using Clock = std::chrono::steady_clock;

CheckResult timed(const std::string& name, const std::function<CheckResult()>& body) {
  const auto t0 = Clock::now();
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

std::string exact(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform(lo, hi);
  return t;
}

void jitter(const ParameterList& params, Rng& rng, double sd) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_values()) v += rng.normal(0.0, sd);
  }
}

std::vector<double> flat(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

CkanConfig geometry(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw, std::size_t s,
                    std::size_t p, std::size_t d) {
  CkanConfig c;
  c.c_in = c_in;
  c.c_out = c_out;
  c.kernel = {kh, kw};
  c.stride = {s, s};
  c.padding = {p, p};
  c.dilation = {d, d};
  return c;
}

}  // namespace

CheckResult check_conv_equivalence(std::size_t configs) {
  CheckResult r;
  Rng rng(101);
  double worst = 0.0;
  std::size_t done = 0, attempts = 0;
  while (done < configs && attempts < 50 * configs) {
    ++attempts;
    const std::size_t c_in = 1 + rng.index(3), c_out = 1 + rng.index(4);
    const std::size_t kh = 1 + rng.index(4), kw = 1 + rng.index(4);
    const std::size_t s = 1 + rng.index(2), p = rng.index(3), d = 1 + rng.index(2);
    const std::size_t h = 4 + rng.index(6), w = 4 + rng.index(6);
    CkanConfig cfg = geometry(c_in, c_out, kh, kw, s, p, d);
    try {
      (void)output_dims(h, w, cfg);
    } catch (const GeometryError&) {
      continue;
    }
    cfg.chunk_pixels = 1 + rng.index(20);
    Ckan op = make_conv(cfg, rng, true);
    auto& lin = std::get<LinearProjector>(op.projector);
    for (double& v : lin.bias.mutable_values()) v = rng.normal();
    const Tensor x = random_tensor({2, c_in, h, w}, rng, -1.0, 1.0);
    const auto ref = oracle::direct_conv(x, flat(lin.weight), flat(lin.bias), cfg);
    const Tensor full = ckan_forward(x, op);
    const Tensor chunked = ckan_forward_chunked(x, op);
    worst = std::max({worst, max_abs_diff(full.values(), ref), max_abs_diff(chunked.values(), ref)});
    ++done;
  }
  r.passed = done == configs && worst < 1e-10;
  r.detail = std::to_string(done) + " geometries, max |diff| " + sci(worst) + " (< 1e-10)";
  return r;
}

CheckResult check_unfold_gather() {
  CheckResult r;
  Rng rng(102);
  const CkanConfig cfgs[] = {geometry(2, 1, 3, 3, 1, 1, 1), geometry(3, 1, 2, 3, 2, 0, 1),
                             geometry(1, 1, 3, 2, 1, 2, 2), geometry(2, 1, 1, 1, 2, 0, 1)};
  double worst = 0.0;
  for (const auto& cfg : cfgs) {
    const Tensor x = random_tensor({2, cfg.c_in, 7, 8}, rng, -1.0, 1.0);
    const Tensor u = unfold(x, cfg).as_bkl();
    worst = std::max(worst, max_abs_diff(u.values(), oracle::gather_patches(x, cfg)));
  }
  r.passed = worst == 0.0;
  r.detail = "max |diff| " + sci(worst) + " (exact)";
  return r;
}

CheckResult check_fold_order() {
  CheckResult r;
  std::vector<double> z(2 * 15);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<double>(i);
  const Tensor y = fold_spatial(Tensor({1, 2, 15}, z), 3, 5);
  // row-major: column l of channel c lands at flat offset c * 15 + l
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < z.size(); ++i) wrong += y.values()[i] != z[i];
  r.passed = wrong == 0 && y.shape() == Shape{1, 2, 3, 5};
  r.detail = std::to_string(wrong) + " misplaced of " + std::to_string(z.size());
  return r;
}

CheckResult check_chunk_invariance() {
  CheckResult r;
  Rng rng(103);
  CkanConfig cfg = geometry(2, 3, 3, 3, 1, 1, 1);
  Ckan op = make_ckan(cfg, KanOptions{}, rng, {5});
  jitter(op.parameters("p"), rng, 0.3);
  const Tensor x = random_tensor({2, 2, 7, 6}, rng, -1.5, 1.5);
  const std::size_t l = 42;
  double worst = 0.0;
  bool exact_at_l = true;
  for (bool grad : {false, true}) {
    std::optional<NoGradGuard> guard;
    if (!grad) guard.emplace();
    clear_weight_cache(op);
    const Tensor full = ckan_forward(x, op);
    for (std::size_t c : {std::size_t{1}, std::size_t{2}, l - 1, l, l + 7}) {
      op.config.chunk_pixels = c;
      const Tensor y = ckan_forward_chunked(x, op);
      const double d = max_abs_diff(y.values(), full.values());
      worst = std::max(worst, d);
      if (c >= l) exact_at_l = exact_at_l && d == 0.0;
    }
  }
  r.passed = worst < 1e-12;
  r.detail = "chunks {1, 2, L-1, L, L+7}, L = 42, max |diff| " + sci(worst) + " (< 1e-12)" +
             (exact_at_l ? ", bitwise for chunk >= L" : "");
  return r;
}

CheckResult check_spline_properties() {
  CheckResult r;
  Rng rng(104);
  auto& evals = instrument::registry().counter(instrument::kSplineBasisEvals);
  double pu = 0.0, window = 0.0, apply = 0.0;
  bool sizes = true, counted = true;
  for (const SplineGrid& g : {SplineGrid(3, 8, -2.0, 2.0), SplineGrid(1, 6, -1.0, 1.0), SplineGrid(2, 11, -3.0, 1.5)}) {
    const auto p = static_cast<std::size_t>(g.degree());
    std::vector<double> coeffs(g.num_basis());
    for (double& c : coeffs) c = rng.normal();
    evals.reset();
    const std::size_t n = 1000;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = i == 0 ? g.lo() : i == 1 ? g.hi() : rng.uniform(g.lo(), g.hi());
      const BasisWindow w = basis_eval(x, g);
      sizes = sizes && w.count == static_cast<int>(p + 1);
      double s = 0.0;
      for (double v : w.view()) s += v;
      pu = std::max(pu, std::abs(s - 1.0));
      const auto all = oracle::cox_de_boor_all(g.knots(), g.degree(), x);
      double ref_apply = 0.0;
      for (std::size_t m = 0; m < all.size(); ++m) {
        const bool in = m >= w.offset && m < w.offset + p + 1;
        const double mine = in ? w.values[m - w.offset] : 0.0;
        window = std::max(window, std::abs(mine - all[m]));
        ref_apply += coeffs[m] * all[m];
      }
      apply = std::max(apply, std::abs(spline_apply(x, coeffs, g) - ref_apply));
    }
    // basis_eval and spline_apply each evaluate one window per point
    counted = counted && evals.value() == static_cast<std::int64_t>(2 * n * (p + 1));
  }
  r.passed = pu < 1e-12 && window < 1e-12 && apply < 1e-12 && sizes && counted;
  r.detail = "1000 points x 3 grids: partition of unity " + sci(pu) + ", window vs full " + sci(window) +
             ", apply vs full " + sci(apply) + ", window size p+1 " + (sizes ? "yes" : "NO") +
             ", basis evals per point p+1 " + (counted ? "yes" : "NO");
  return r;
}

CheckResult check_kan_layer() {
  CheckResult r;
  Rng rng(105);
  KanLayer layer = make_kan_layer(5, 4, KanOptions{}, rng);
  jitter(layer.parameters("l"), rng, 0.5);
  const Tensor x = random_tensor({7, 5}, rng, -2.5, 2.5);
  const double fwd = max_abs_diff(kan_layer_forward(x, layer).values(), oracle::kan_layer_scalar(flat(x), 7, layer));
  const double mat = max_abs_diff(layer.linear.materialize().values(), oracle::materialize_naive(layer.linear));
  r.passed = fwd < 1e-10 && mat < 1e-12;
  r.detail = "forward vs scalar loop " + sci(fwd) + " (< 1e-10), W vs sum a_jk M_jk " + sci(mat) + " (< 1e-12)";
  return r;
}

CheckResult check_metric_oracles() {
  CheckResult r;
  Rng rng(106);
  const std::size_t h = 37, w = 41;
  Tensor a({h, w}), b({h, w});
  const double fx = 0.11, fy = 0.07;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t q = 0; q < w; ++q) {
      const double v = 0.5 + 0.3 * std::sin(fx * q + fy * y);
      a.mutable_values()[y * w + q] = v;
      b.mutable_values()[y * w + q] = std::clamp(v + rng.normal(0.0, 0.05), 0.0, 1.0);
    }
  const auto fa = flat(a), fb = flat(b);
  const double dp = std::abs(psnr(a, b).db - oracle::psnr_loop(fa, fb, 1.0));
  const double ds = std::abs(ssim(a, b) - oracle::ssim_direct(fa, fb, h, w, 1.0));
  const double dm = std::abs(ms_ssim(a, b) - oracle::ms_ssim_direct(fa, fb, h, w, 1.0));
  const Tensor noise = random_tensor({h, w}, rng, 0.0, 1.0);
  const double dn = std::abs(ssim(a, noise) - oracle::ssim_direct(fa, flat(noise), h, w, 1.0));

  // one pixel off by 0.5 in 25: MSE is exactly 0.01
  Tensor z({5, 5}, 0.0), o({5, 5}, 0.0);
  o.mutable_values()[12] = 0.5;
  const double twenty = psnr(z, o).db;
  const double self = ssim(a, a);
  r.passed = dp < 1e-8 && ds < 1e-8 && dm < 1e-8 && dn < 1e-8 && twenty == 20.0 && self == 1.0;
  r.detail = "psnr " + sci(dp) + ", ssim " + sci(std::max(ds, dn)) + ", ms-ssim " + sci(dm) +
             " (< 1e-8); MSE 0.01 -> " + exact(twenty) + " dB; ssim(x, x) = " + exact(self);
  return r;
}

std::vector<std::string> grad_classes() {
  return {"a", "alpha", "ln_gain", "ln_bias", "conv_weight", "conv_bias", "generator", "discriminator", "input"};
}

CheckResult check_gradient_class(const std::string& cls) {
  CheckResult r;
  Rng rng(107);
  const double step = 1e-6, floor = 1e-3;
  oracle::GradCheck gc;
  auto suffix = [](const std::string& name, const std::string& s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };

  if (cls == "a" || cls == "alpha" || cls == "ln_gain" || cls == "ln_bias" || cls == "input") {
    CkanConfig cfg = geometry(2, 3, 3, 3, 1, 1, 1);
    cfg.chunk_pixels = 7;
    Ckan op = make_ckan(cfg, KanOptions{}, rng, {4});
    jitter(op.parameters("p"), rng, 0.3);
    Tensor x = random_tensor({1, 2, 5, 5}, rng, -1.5, 1.5);
    x.set_requires_grad(true);
    const Tensor probe = random_tensor({1, 3, 5, 5}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt;
    if (cls == "input") {
      wrt.push_back(x);
    } else {
      for (const auto& p : op.parameters("p"))
        if (suffix(p.name, "." + cls)) wrt.push_back(p.tensor);
    }
    gc = oracle::check_gradients([&] { return sum(mul(ckan_forward_chunked(x, op), probe)); }, wrt, step, 64, floor);
  } else if (cls == "conv_weight" || cls == "conv_bias") {
    CkanConfig cfg = geometry(2, 3, 3, 2, 2, 1, 1);
    Ckan op = make_conv(cfg, rng, true);
    jitter(op.parameters("c"), rng, 0.2);
    Tensor x = random_tensor({2, 2, 6, 7}, rng, -1.0, 1.0);
    const auto dims = output_dims(6, 7, cfg);
    const Tensor probe = random_tensor({2, 3, dims.h_out, dims.w_out}, rng, -1.0, 1.0);
    const auto params = op.parameters("c");
    std::vector<Tensor> wrt{params[cls == "conv_weight" ? 0 : 1].tensor};
    gc = oracle::check_gradients([&] { return sum(mul(ckan_forward(x, op), probe)); }, wrt, step, 64, floor);
  } else if (cls == "generator") {
    GeneratorConfig gcfg;
    gcfg.base_channels = 3;
    gcfg.num_residual_blocks = 1;
    gcfg.upscale = 2;
    gcfg.kan_hidden = 4;
    gcfg.ckan_upsample = true;
    gcfg.residual_gain = 0.5;
    gcfg.seed = 3;
    Generator g = make_generator(gcfg);
    jitter(g.parameters(), rng, 0.05);
    const Tensor x = random_tensor({1, 3, 4, 4}, rng, 0.0, 1.0);
    const Tensor probe = random_tensor({1, 3, 8, 8}, rng, -1.0, 1.0);
    std::vector<Tensor> wrt;
    for (const auto& p : g.parameters()) wrt.push_back(p.tensor);
    gc = oracle::check_gradients([&] { return sum(mul(generator_forward(x, g), probe)); }, wrt, step, 6, floor);
  } else if (cls == "discriminator") {
    DiscriminatorConfig dcfg;
    dcfg.channels = {3, 4, 4, 4, 4};
    Discriminator d = make_discriminator(dcfg);
    const Tensor x = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
    std::vector<Tensor> wrt;
    for (const auto& p : d.parameters()) wrt.push_back(p.tensor);
    gc = oracle::check_gradients([&] { return mean(discriminator_forward(x, d)); }, wrt, step, 12, floor);
  } else {
    r.detail = "unknown parameter class " + cls;
    return r;
  }
  r.passed = gc.checked > 0 && gc.max_rel_err < 1e-5;
  r.detail = std::to_string(gc.checked) + " entries, max rel err " + sci(gc.max_rel_err) + " (< 1e-5)" +
             (r.passed ? "" : "; worst " + gc.worst);
  return r;
}

const std::vector<Check>& self_checks() {
  static const std::vector<Check> checks = [] {
    std::vector<Check> c;
    c.push_back({"conv_equivalence", {"conv", "fold"}, [] { return check_conv_equivalence(); }});
    c.push_back({"unfold_gather", {"conv", "unfold"}, [] { return check_unfold_gather(); }});
    c.push_back({"fold_order", {"fold"}, [] { return check_fold_order(); }});
    c.push_back({"chunk_invariance", {"chunk", "fold"}, [] { return check_chunk_invariance(); }});
    c.push_back({"spline_properties", {"spline"}, [] { return check_spline_properties(); }});
    c.push_back({"kan_layer", {"kan"}, [] { return check_kan_layer(); }});
    c.push_back({"metric_oracles", {"metrics"}, [] { return check_metric_oracles(); }});
    for (const auto& cls : grad_classes())
      c.push_back({"grad." + cls, {"grad"}, [cls] { return check_gradient_class(cls); }});
    return c;
  }();
  return checks;
}

std::vector<CheckResult> run_checks(const std::string& filter) {
  std::vector<CheckResult> out;
  for (const auto& c : self_checks()) {
    bool match = filter.empty() || c.name.find(filter) != std::string::npos;
    for (const auto& t : c.tags) match = match || t.find(filter) != std::string::npos;
    if (match) out.push_back(timed(c.name, c.run));
  }
  return out;
}

}  // namespace ckan::cli
