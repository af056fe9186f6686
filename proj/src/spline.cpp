#include "ckan/spline.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "ckan/errors.h"
#include "ckan/instrument.h"

namespace ckan {

SplineGrid::SplineGrid(int degree, std::size_t num_basis, double lo, double hi)
    : degree_(degree), num_basis_(num_basis), lo_(lo), hi_(hi) {
  if (degree < 1 || degree > kMaxSplineDegree) {
    throw ConfigError("spline degree must lie in [1, " + std::to_string(kMaxSplineDegree) +
                      "], got " + std::to_string(degree));
  }
  if (num_basis < static_cast<std::size_t>(degree) + 1) {
    throw ConfigError("spline needs at least degree+1 basis functions, got " +
                      std::to_string(num_basis));
  }
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
    throw ConfigError("spline grid range must be finite with lo < hi");
  }
  const std::size_t intervals = num_basis - static_cast<std::size_t>(degree);
  spacing_ = (hi - lo) / static_cast<double>(intervals);
  knots_.reserve(num_basis + degree + 1);
  for (int i = 0; i <= degree; ++i) knots_.push_back(lo);
  for (std::size_t j = 1; j < intervals; ++j) knots_.push_back(lo + spacing_ * static_cast<double>(j));
  for (int i = 0; i <= degree; ++i) knots_.push_back(hi);
}

double SplineGrid::clamp(double x) const { return std::clamp(x, lo_, hi_); }

std::size_t SplineGrid::span(double x) const {
  const double t = (clamp(x) - lo_) / spacing_;
  const std::size_t last = num_basis_ - 1;
  const auto cell = static_cast<std::size_t>(std::max(0.0, std::floor(t)));
  return std::min(static_cast<std::size_t>(degree_) + cell, last);
}

bool SplineGrid::operator==(const SplineGrid& other) const {
  return degree_ == other.degree_ && num_basis_ == other.num_basis_ && lo_ == other.lo_ &&
         hi_ == other.hi_;
}

namespace detail {

std::size_t eval_basis_window(const SplineGrid& grid, double x, double* values, double* derivs) {
  const int p = grid.degree();
  const double* t = grid.knots().data();
  const bool outside = x < grid.lo() || x > grid.hi();
  const double u = grid.clamp(x);
  const std::size_t s = grid.span(u);

  std::array<double, kMaxSplineDegree + 2> left{};
  std::array<double, kMaxSplineDegree + 2> right{};
  std::array<double, kMaxSplineDegree + 1> lower{};
  double* n = values;
  n[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    if (j == p && derivs != nullptr) std::copy(n, n + p, lower.begin());
    left[j] = u - t[s + 1 - j];
    right[j] = t[s + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom != 0.0 ? n[r] / denom : 0.0;
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }

  if (derivs != nullptr) {
    if (outside) {
      std::fill(derivs, derivs + p + 1, 0.0);
    } else {
      // lower[q] = N_{s-p+1+q, p-1}; degree-lowering formula for N'_{i,p}.
      const std::size_t first = s - static_cast<std::size_t>(p);
      for (int r = 0; r <= p; ++r) {
        const std::size_t i = first + static_cast<std::size_t>(r);
        double d = 0.0;
        if (r >= 1) {
          const double denom = t[i + p] - t[i];
          if (denom != 0.0) d += p / denom * lower[r - 1];
        }
        if (r <= p - 1) {
          const double denom = t[i + p + 1] - t[i + 1];
          if (denom != 0.0) d -= p / denom * lower[r];
        }
        derivs[r] = d;
      }
    }
  }
  return s - static_cast<std::size_t>(p);
}

}  // namespace detail

namespace {
instrument::Counter& basis_counter() {
  static auto& c = instrument::registry().counter(instrument::kSplineBasisEvals);
  return c;
}
}  // namespace

BasisWindow basis_eval(double x, const SplineGrid& grid) {
  BasisWindow w;
  w.count = grid.degree() + 1;
  w.offset = detail::eval_basis_window(grid, x, w.values.data(), nullptr);
  basis_counter().add(w.count);
  return w;
}

BasisWindow basis_derivative(double x, const SplineGrid& grid) {
  BasisWindow values;
  BasisWindow w;
  w.count = grid.degree() + 1;
  w.offset = detail::eval_basis_window(grid, x, values.values.data(), w.values.data());
  basis_counter().add(w.count);
  return w;
}

double spline_apply(double x, std::span<const double> coeffs, const SplineGrid& grid) {
  if (coeffs.size() != grid.num_basis()) {
    throw DimensionError("spline coefficient count " + std::to_string(coeffs.size()) +
                         " does not match grid basis count " + std::to_string(grid.num_basis()));
  }
  const BasisWindow w = basis_eval(x, grid);
  double acc = 0.0;
  for (int m = 0; m < w.count; ++m) acc += coeffs[w.offset + m] * w.values[m];
  return acc;
}

}  // namespace ckan
