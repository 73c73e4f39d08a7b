#pragma once

#include "cauca/core.hpp"

namespace cauca {

/// Monotone rational-quadratic spline on [-bound, bound] with identity
/// (linear) tails. Each transformed scalar is driven by 3K − 1 raw values
/// laid out as [widths (K) | heights (K) | interior derivatives (K − 1)].
struct SplineConfig {
  int bins = 8;
  double bound = 5.0;
  double min_width = 1e-3;
  double min_height = 1e-3;
  double min_derivative = 1e-3;

  int raw_size() const { return 3 * bins - 1; }
};

inline constexpr int kMaxSplineBins = 64;

/// y = s(x); writes log s'(x) to `logdet`.
double spline_forward(double x, const double* raw, const SplineConfig& cfg, double* logdet);

/// Adjoint of spline_forward: given ∂L/∂y = gy and ∂L/∂logdet = gl, returns
/// ∂L/∂x and accumulates ∂L/∂raw into `graw` (3K − 1 entries).
double spline_backward(double x, const double* raw, const SplineConfig& cfg, double gy, double gl,
                       double* graw);

/// x = s⁻¹(y) in closed form; writes log s'(x) (forward direction) to `logdet`.
double spline_inverse(double y, const double* raw, const SplineConfig& cfg, double* logdet);

}  // namespace cauca
