#include "bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <tuple>

#include "ckan/autograd.h"
#include "ckan/ckan_operator.h"
#include "ckan/instrument.h"
#include "ckan/parameters.h"

namespace ckan::cli {
namespace {

std::int64_t all_counters(instrument::Registry& reg) {
  return reg.counter(instrument::kUnfoldElements).value() + reg.counter(instrument::kMatmulMacs).value() +
         reg.counter(instrument::kSplineMacs).value() + reg.counter(instrument::kSplineBasisEvals).value();
}

}  // namespace

std::vector<BenchPoint> run_bench(const BenchSweep& sweep) {
  auto& reg = instrument::registry();
  auto& gauge = reg.gauge(instrument::kPatchBuffer);
  std::vector<BenchPoint> out;
  NoGradGuard ng;
  for (std::size_t c : sweep.channels)
    for (std::size_t k : sweep.kernels)
      for (std::size_t s : sweep.sizes) {
        CkanConfig cfg;
        cfg.c_in = c;
        cfg.c_out = c;
        cfg.kernel = {k, k};
        cfg.padding = {k / 2, k / 2};
        Rng rng(derive_seed(sweep.seed, c * 1000 + k, s));
        KanOptions opt;
        Ckan op = make_ckan(cfg, opt, rng, {sweep.hidden});
        Tensor x({sweep.batch, c, s, s});
        for (double& v : x.mutable_values()) v = rng.uniform(-1.0, 1.0);
        const auto dims = output_dims(s, s, cfg);

        // single pass reference
        op.config.chunk_pixels = dims.locations;
        clear_weight_cache(op);
        reg.reset_all();
        (void)ckan_forward_chunked(x, op);
        const std::int64_t full = all_counters(reg);

        for (std::size_t chunk : sweep.chunks) {
          op.config.chunk_pixels = chunk;
          clear_weight_cache(op);
          reg.reset_all();
          gauge.reset_peak();
          const auto t0 = std::chrono::steady_clock::now();
          (void)ckan_forward_chunked(x, op);
          BenchPoint p;
          p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          const CostEstimate est = cost_model(op, sweep.batch, s, s);
          p.batch = sweep.batch;
          p.channels = c;
          p.size = s;
          p.kernel = k;
          p.chunk = chunk;
          p.locations = dims.locations;
          p.patch_dim = dims.patch_dim;
          p.unfold = reg.counter(instrument::kUnfoldElements).value();
          p.unfold_model = est.unfold;
          p.projection = reg.counter(instrument::kMatmulMacs).value() + reg.counter(instrument::kSplineMacs).value();
          p.projection_model = est.projection;
          p.total = all_counters(reg);
          p.total_full = full;
          p.peak = gauge.peak();
          p.peak_bound = est.patch_buffer_chunked;
          out.push_back(p);
        }
      }
  return out;
}

double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0.0) return sxx == 0.0 ? 1.0 : 0.0;
  if (sxx == 0.0) return 0.0;
  return sxy * sxy / (sxx * syy);
}

BenchSummary summarize(const std::vector<BenchPoint>& points) {
  BenchSummary s;
  s.points = points.size();
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, std::pair<std::vector<double>, std::vector<double>>>
      series;
  for (const auto& p : points) {
    s.unfold_exact = s.unfold_exact && p.unfold == p.unfold_model;
    s.projection_exact = s.projection_exact && p.projection == p.projection_model;
    s.peak_within_bound = s.peak_within_bound && p.peak <= p.peak_bound;
    s.peak_equals_bound = s.peak_equals_bound && p.peak == p.peak_bound;
    const double rel = std::abs(static_cast<double>(p.total - p.total_full)) / static_cast<double>(p.total_full);
    s.max_total_rel_diff = std::max(s.max_total_rel_diff, rel);
    if (p.chunk <= p.locations) {
      auto& [xs, ys] = series[{p.batch, p.channels, p.size, p.kernel}];
      xs.push_back(static_cast<double>(p.chunk));
      ys.push_back(static_cast<double>(p.peak));
    }
  }
  for (const auto& [key, xy] : series) {
    if (xy.first.size() < 3) continue;
    s.min_r2 = std::min(s.min_r2, r_squared(xy.first, xy.second));
  }
  return s;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchPoint>& points) {
  out << "batch,channels,size,kernel,chunk,L,K,unfold,unfold_model,projection,projection_model,total,total_full,"
         "peak,peak_bound,seconds\n";
  for (const auto& p : points) {
    out << p.batch << ',' << p.channels << ',' << p.size << ',' << p.kernel << ',' << p.chunk << ',' << p.locations
        << ',' << p.patch_dim << ',' << p.unfold << ',' << p.unfold_model << ',' << p.projection << ','
        << p.projection_model << ',' << p.total << ',' << p.total_full << ',' << p.peak << ',' << p.peak_bound << ','
        << p.seconds << '\n';
  }
}

}  // namespace ckan::cli
