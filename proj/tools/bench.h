#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

namespace ckan::cli {

// Geometry sweep for the complexity benchmark. Every combination of size,
// kernel and channel count is run once per chunk size (stride 1, "same"
// padding, so L = size * size).
struct BenchSweep {
  std::vector<std::size_t> sizes{12, 20, 32};
  std::vector<std::size_t> chunks{1, 5, 16, 64, 200, 1024};
  std::vector<std::size_t> kernels{1, 3, 5};
  std::vector<std::size_t> channels{2, 4};
  std::size_t batch = 2;
  std::size_t hidden = 8;
  std::uint64_t seed = 11;
};

struct BenchPoint {
  std::size_t batch = 0, channels = 0, size = 0, kernel = 0, chunk = 0;
  std::size_t locations = 0;  // L
  std::size_t patch_dim = 0;  // K
  std::int64_t unfold = 0;           // measured
  std::int64_t unfold_model = 0;     // B K L
  std::int64_t projection = 0;       // measured matmul + spline MACs
  std::int64_t projection_model = 0;
  std::int64_t total = 0;            // all counters, chunked pass
  std::int64_t total_full = 0;       // all counters, single pass
  std::int64_t peak = 0;             // patch buffer high-water mark
  std::int64_t peak_bound = 0;       // B K min(chunk, L)
  double seconds = 0.0;
};

struct BenchSummary {
  std::size_t points = 0;
  bool unfold_exact = true;
  bool projection_exact = true;
  bool peak_within_bound = true;
  bool peak_equals_bound = true;
  // Smallest R^2 of peak against chunk over each geometry's chunk <= L points.
  double min_r2 = 1.0;
  // Largest |total - total_full| / total_full.
  double max_total_rel_diff = 0.0;
};

std::vector<BenchPoint> run_bench(const BenchSweep& sweep);
BenchSummary summarize(const std::vector<BenchPoint>& points);

// Coefficient of determination of the least-squares line y ~ a + b x.
double r_squared(const std::vector<double>& x, const std::vector<double>& y);

void write_bench_csv(std::ostream& out, const std::vector<BenchPoint>& points);

}  // namespace ckan::cli
