#include "cauca/spline.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace cauca {
namespace {

// softplus(shift) + min_derivative = 1, so zero raw derivatives give slope 1.
double derivative_shift(double min_derivative) {
  thread_local double cached_min = std::nan(""), cached_shift = 0.0;
  if (min_derivative != cached_min) {
    cached_min = min_derivative;
    cached_shift = std::log(std::expm1(1.0 - min_derivative));
  }
  return cached_shift;
}

struct Knots {
  int bins;
  std::array<double, kMaxSplineBins> pw, ph;          // softmax probabilities
  std::array<double, kMaxSplineBins> w, h;            // bin widths / heights
  std::array<double, kMaxSplineBins + 1> x, y;        // knot positions
  std::array<double, 2> d, dsig;                      // slopes at knots k, k+1 and ∂d/∂raw

  Knots(const double* raw, const SplineConfig& cfg) : bins(cfg.bins) {
    const int k = cfg.bins;
    const double span = 2.0 * cfg.bound;
    softmax(raw, pw.data(), k);
    softmax(raw + k, ph.data(), k);
    const double wscale = 1.0 - cfg.min_width * k;
    const double hscale = 1.0 - cfg.min_height * k;
    x[0] = y[0] = -cfg.bound;
    for (int i = 0; i < k; ++i) {
      w[i] = span * (cfg.min_width + wscale * pw[i]);
      h[i] = span * (cfg.min_height + hscale * ph[i]);
      x[i + 1] = x[i] + w[i];
      y[i + 1] = y[i] + h[i];
    }
    x[k] = y[k] = cfg.bound;
  }

  /// Fills d and dsig for the two knots bounding bin `bin`.
  void slopes(int bin, const double* raw, const SplineConfig& cfg) {
    const double shift = derivative_shift(cfg.min_derivative);
    for (int j = 0; j < 2; ++j) {
      const int i = bin + j;
      if (i == 0 || i == bins) {
        d[j] = 1.0;
        dsig[j] = 0.0;
      } else {
        const double v = raw[2 * bins + i - 1] + shift;
        d[j] = cfg.min_derivative + softplus(v);
        dsig[j] = sigmoid(v);
      }
    }
  }

  static void softmax(const double* in, double* out, int n) {
    double mx = in[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += (out[i] = std::exp(in[i] - mx));
    for (int i = 0; i < n; ++i) out[i] /= s;
  }

  static int search(const double* knots, int bins, double v) {
    const int idx = static_cast<int>(std::upper_bound(knots, knots + bins + 1, v) - knots) - 1;
    return std::clamp(idx, 0, bins - 1);
  }
};

void check_bins(const SplineConfig& cfg) {
  if (cfg.bins < 2 || cfg.bins > kMaxSplineBins) throw ConfigError("spline: bin count out of range");
}

}  // namespace

double spline_forward(double x, const double* raw, const SplineConfig& cfg, double* logdet) {
  if (x < -cfg.bound || x > cfg.bound) {
    *logdet = 0.0;
    return x;
  }
  check_bins(cfg);
  Knots kn(raw, cfg);
  const int k = Knots::search(kn.x.data(), cfg.bins, x);
  kn.slopes(k, raw, cfg);
  const double wk = kn.w[k], hk = kn.h[k], dk = kn.d[0], dk1 = kn.d[1];
  const double xi = (x - kn.x[k]) / wk;
  const double s = hk / wk;
  const double t = xi * (1.0 - xi);
  const double a = s * xi * xi + dk * t;
  const double den = s + (dk1 + dk - 2.0 * s) * t;
  const double c = dk1 * xi * xi + 2.0 * s * t + dk * (1.0 - xi) * (1.0 - xi);
  *logdet = 2.0 * std::log(s) + std::log(c) - 2.0 * std::log(den);
  return kn.y[k] + hk * a / den;
}

double spline_backward(double x, const double* raw, const SplineConfig& cfg, double gy, double gl,
                       double* graw) {
  if (x < -cfg.bound || x > cfg.bound) return gy;
  check_bins(cfg);
  const int nb = cfg.bins;
  Knots kn(raw, cfg);
  const int k = Knots::search(kn.x.data(), nb, x);
  kn.slopes(k, raw, cfg);
  const double wk = kn.w[k], hk = kn.h[k], dk = kn.d[0], dk1 = kn.d[1];
  const double xi = (x - kn.x[k]) / wk;
  const double s = hk / wk;
  const double t = xi * (1.0 - xi);
  const double a = s * xi * xi + dk * t;
  const double lam = dk1 + dk - 2.0 * s;
  const double den = s + lam * t;
  const double c = dk1 * xi * xi + 2.0 * s * t + dk * (1.0 - xi) * (1.0 - xi);

  // Local adjoints of y = y_k + h_k a / den and logdet = 2 log s + log c − 2 log den.
  const double g_yk = gy;
  double g_hk = gy * a / den;
  const double g_a = gy * hk / den;
  const double g_den = -gy * hk * a / (den * den) - 2.0 * gl / den;
  const double g_c = gl / c;
  const double g_s = g_a * xi * xi + g_den * (1.0 - 2.0 * t) + 2.0 * gl / s + g_c * 2.0 * t;
  const double g_dk = g_a * t + g_den * t + g_c * (1.0 - xi) * (1.0 - xi);
  const double g_dk1 = g_den * t + g_c * xi * xi;
  const double g_t = g_a * dk + g_den * lam + g_c * 2.0 * s;
  const double g_xi = g_a * 2.0 * s * xi + g_c * (2.0 * dk1 * xi - 2.0 * dk * (1.0 - xi)) +
                      g_t * (1.0 - 2.0 * xi);
  g_hk += g_s / wk;
  const double g_wk = -g_s * hk / (wk * wk) - g_xi * xi / wk;
  const double g_x = g_xi / wk;
  const double g_xk = -g_xi / wk;

  // Knot positions are cumulative sums of the bin sizes.
  std::array<double, kMaxSplineBins> g_w{}, g_h{};
  for (int i = 0; i < k; ++i) {
    g_w[i] += g_xk;
    g_h[i] += g_yk;
  }
  g_w[k] += g_wk;
  g_h[k] += g_hk;

  const double span = 2.0 * cfg.bound;
  const double wscale = span * (1.0 - cfg.min_width * nb);
  const double hscale = span * (1.0 - cfg.min_height * nb);
  double dot_w = 0.0, dot_h = 0.0;
  for (int i = 0; i < nb; ++i) {
    dot_w += kn.pw[i] * g_w[i] * wscale;
    dot_h += kn.ph[i] * g_h[i] * hscale;
  }
  for (int i = 0; i < nb; ++i) {
    graw[i] += kn.pw[i] * (g_w[i] * wscale - dot_w);
    graw[nb + i] += kn.ph[i] * (g_h[i] * hscale - dot_h);
  }
  if (k >= 1) graw[2 * nb + k - 1] += g_dk * kn.dsig[0];
  if (k + 1 <= nb - 1) graw[2 * nb + k] += g_dk1 * kn.dsig[1];
  return g_x;
}

double spline_inverse(double y, const double* raw, const SplineConfig& cfg, double* logdet) {
  if (y < -cfg.bound || y > cfg.bound) {
    *logdet = 0.0;
    return y;
  }
  check_bins(cfg);
  Knots kn(raw, cfg);
  const int k = Knots::search(kn.y.data(), cfg.bins, y);
  kn.slopes(k, raw, cfg);
  const double wk = kn.w[k], hk = kn.h[k], dk = kn.d[0], dk1 = kn.d[1];
  const double s = hk / wk;
  const double lam = dk1 + dk - 2.0 * s;
  const double dy = y - kn.y[k];
  const double qa = hk * (s - dk) + dy * lam;
  const double qb = hk * dk - dy * lam;
  const double qc = -s * dy;
  const double disc = std::max(qb * qb - 4.0 * qa * qc, 0.0);
  const double xi = (2.0 * qc) / (-qb - std::sqrt(disc));
  const double x = xi * wk + kn.x[k];
  const double t = xi * (1.0 - xi);
  const double den = s + lam * t;
  const double c = dk1 * xi * xi + 2.0 * s * t + dk * (1.0 - xi) * (1.0 - xi);
  *logdet = 2.0 * std::log(s) + std::log(c) - 2.0 * std::log(den);
  return x;
}

}  // namespace cauca
