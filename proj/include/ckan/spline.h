#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace ckan {

inline constexpr int kMaxSplineDegree = 7;

// Clamped, uniformly spaced B-spline knot vector over [lo, hi].
//
// With degree p and D_s basis functions the knot vector has D_s + p + 1
// entries: lo repeated p+1 times, D_s - p - 1 evenly spaced interior knots,
// then hi repeated p+1 times.
class SplineGrid {
 public:
  // Throws ConfigError when degree is outside [1, kMaxSplineDegree],
  // num_basis < degree + 1 or the range is empty / non-finite.
  SplineGrid(int degree = 3, std::size_t num_basis = 8, double lo = -2.0, double hi = 2.0);

  int degree() const { return degree_; }
  std::size_t num_basis() const { return num_basis_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double spacing() const { return spacing_; }
  const std::vector<double>& knots() const { return knots_; }

  double clamp(double x) const;
  // Knot span index s with knots[s] <= clamp(x) < knots[s+1], s in [p, D_s - 1].
  std::size_t span(double x) const;

  bool operator==(const SplineGrid& other) const;

 private:
  int degree_;
  std::size_t num_basis_;
  double lo_;
  double hi_;
  double spacing_;
  std::vector<double> knots_;
};

// The p+1 basis functions that can be nonzero at a point; B_m for m outside
// [offset, offset + count) is zero.
struct BasisWindow {
  std::size_t offset = 0;
  int count = 0;
  std::array<double, kMaxSplineDegree + 1> values{};

  std::span<const double> view() const { return {values.data(), static_cast<std::size_t>(count)}; }
};

// Cox-de Boor evaluation of the active window at clamp(x). Adds p+1 to the
// spline basis-evaluation counter.
BasisWindow basis_eval(double x, const SplineGrid& grid);

// d/dx of the same window. Zero outside [lo, hi] (the input is clamped there).
BasisWindow basis_derivative(double x, const SplineGrid& grid);

// sum_m coeffs[m] * B_m(x) using only the active window.
double spline_apply(double x, std::span<const double> coeffs, const SplineGrid& grid);

namespace detail {
// Uninstrumented kernel used by the layer code. Writes p+1 values (and
// derivatives when `derivs` is non-null) and returns the window offset.
std::size_t eval_basis_window(const SplineGrid& grid, double x, double* values, double* derivs);
}  // namespace detail

}  // namespace ckan
