#include <algorithm>
#include <cstring>
#include <vector>

#include "ckan/autograd.h"
#include "ckan/instrument.h"

namespace ckan::detail {

namespace {

instrument::Counter& mac_counter() {
  static auto& c = instrument::registry().counter(instrument::kMatmulMacs);
  return c;
}

// C rows [i, i+4) += A rows * B, with B streamed once per 4 rows.
void kernel_rows4(std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* __restrict b, double* __restrict c0, double* __restrict c1,
                  double* __restrict c2, double* __restrict c3) {
  for (std::size_t p = 0; p < k; ++p) {
    const double a0 = a[p];
    const double a1 = a[lda + p];
    const double a2 = a[2 * lda + p];
    const double a3 = a[3 * lda + p];
    const double* __restrict brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double bv = brow[j];
      c0[j] += a0 * bv;
      c1[j] += a1 * bv;
      c2[j] += a2 * bv;
      c3[j] += a3 * bv;
    }
  }
}

void kernel_row1(std::size_t n, std::size_t k, const double* a, const double* __restrict b,
                 double* __restrict c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* __restrict brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

std::vector<double> transposed(std::size_t rows, std::size_t cols, const double* src) {
  std::vector<double> out(rows * cols);
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = std::min(rows, r0 + kBlock);
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = src[r * cols + c];
    }
  }
  return out;
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  mac_counter().add(static_cast<std::int64_t>(m * n * k));
  if (m == 0 || n == 0 || k == 0) return;
  // Column panels keep the four C row segments resident in L1.
  constexpr std::size_t kPanel = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kPanel) {
    const std::size_t width = std::min(kPanel, n - j0);
    std::size_t i = 0;
    if (width == n) {
      for (; i + 4 <= m; i += 4) {
        kernel_rows4(n, k, a + i * k, k, b, c + i * n, c + (i + 1) * n, c + (i + 2) * n,
                     c + (i + 3) * n);
      }
      for (; i < m; ++i) kernel_row1(n, k, a + i * k, b, c + i * n);
      return;
    }
    // Panelled path: gather the B panel contiguously.
    std::vector<double> panel(k * width);
    for (std::size_t p = 0; p < k; ++p)
      std::memcpy(panel.data() + p * width, b + p * n + j0, width * sizeof(double));
    for (; i + 4 <= m; i += 4) {
      kernel_rows4(width, k, a + i * k, k, panel.data(), c + i * n + j0, c + (i + 1) * n + j0,
                   c + (i + 2) * n + j0, c + (i + 3) * n + j0);
    }
    for (; i < m; ++i) kernel_row1(width, k, a + i * k, panel.data(), c + i * n + j0);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  const auto bt = transposed(n, k, b);
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  const auto at = transposed(k, m, a);
  gemm_nn(m, n, k, at.data(), b, c, accumulate);
}

}  // namespace ckan::detail
