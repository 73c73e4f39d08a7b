#pragma once

#include "cauca/core.hpp"

#include "json.hpp"

#include <vector>

namespace cauca {

/// Leaky-tanh σ(x) = tanh(x) + 0.1 x and helpers.
double leaky_tanh(double x);
double leaky_tanh_deriv(double x);
/// Inverse of σ by safeguarded Newton on the bracket [y/1.1 − 1, y/0.1 + 1]
/// (ordered). Throws NumericError if 100 iterations do not converge.
double leaky_tanh_inverse(double y, double tol = 1e-15);

/// Ground-truth mixing f = σ ∘ A_M ∘ … ∘ σ ∘ A_1 : R^d → R^d.
class MixingFunction {
 public:
  MixingFunction() = default;
  explicit MixingFunction(std::vector<Matrix> layers);

  int dim() const { return d_; }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  const std::vector<Matrix>& layers() const { return layers_; }

  Vector forward(const Vector& z) const;
  /// Row-wise forward of an n × d batch.
  Matrix forward_batch(const Matrix& z) const;
  double log_abs_det_jacobian(const Vector& z) const;
  Vector log_abs_det_jacobian_batch(const Matrix& z) const;
  /// Layer-by-layer inverse; ‖f(z) − x‖∞ ≤ tol is verified on return.
  Vector inverse(const Vector& x, double tol = 1e-9) const;
  Matrix inverse_batch(const Matrix& x, double tol = 1e-9) const;

  friend void to_json(nlohmann::json& j, const MixingFunction& f);
  friend void from_json(const nlohmann::json& j, MixingFunction& f);

 private:
  int d_ = 0;
  std::vector<Matrix> layers_;
  std::vector<double> log_abs_dets_;
};

/// Entries of each A_m ~ Uniform(0, 1); matrices with |det| < 0.1 are redrawn.
MixingFunction sample_mixing(int d, int num_layers, Rng& rng);

}  // namespace cauca
