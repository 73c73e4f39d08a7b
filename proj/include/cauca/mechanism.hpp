#pragma once

#include "cauca/core.hpp"
#include "cauca/dense_net.hpp"

#include "json.hpp"

#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace cauca {

/// Strictly monotone scalar diffeomorphism
///   h(z) = sign · (a z + b tanh(c z)) + shift,  a > 0, b ≥ 0, c > 0.
struct ScalarDiffeo {
  double a = 1.0;
  double b = 0.0;
  double c = 1.0;
  double shift = 0.0;
  int sign = 1;

  double operator()(double z) const;
  double deriv(double z) const;
  double second_deriv(double z) const;
  /// Bracketed Newton; exact to ~1e-15 relative.
  double inverse(double y) const;
};

/// An element of S_scaling: one ScalarDiffeo per coordinate.
struct ElementwiseMap {
  std::vector<ScalarDiffeo> maps;

  int size() const { return static_cast<int>(maps.size()); }
  Vector apply(const Vector& z) const;
  Vector inverse(const Vector& y) const;
  double log_abs_det(const Vector& z) const;

  static ElementwiseMap identity(int d);
  /// Random map with a ∈ [0.5, 2], b ∈ [0, 2], c ∈ [0.5, 2], shift ∈ [-1, 1], random sign.
  static ElementwiseMap random(int d, Rng& rng);
};

struct LinearGaussian {
  std::vector<double> weights;  // one per parent
  double bias = 0.0;
  double std = 1.0;
};

struct GaussianMarginal {
  double mean = 0.0;
  double std = 1.0;
};

/// Z = loc(Z_pa) + scale(Z_pa)·ε with scale = softplus(raw) + floor.
struct LocationScaleNet {
  DenseNet loc;
  DenseNet scale;
  double floor = 0.1;
};

/// Half-Gaussian(rate a) | flat plateau of height 1 on [0, L] | half-Gaussian(rate b),
/// L = 1 − (√(π/a) + √(π/b))/2.
struct Plateau {
  double a = 0.0;
  double b = 0.0;
  double plateau_end() const;
};

class Mechanism;

/// Mechanism of Y = h(Z) given Y_pa = h_pa(Z_pa), for an inner mechanism of Z.
struct Pushed {
  std::shared_ptr<const Mechanism> inner;
  ScalarDiffeo self;
  std::vector<ScalarDiffeo> parents;
};

/// Causal mechanism p(z_i | z_pa): a distribution family plus an ordered parent list.
class Mechanism {
 public:
  using Family = std::variant<LinearGaussian, GaussianMarginal, LocationScaleNet, Plateau, Pushed>;

  Mechanism(Family family, std::vector<int> parents);

  static Mechanism gaussian(double mean, double std) {
    return Mechanism(GaussianMarginal{mean, std}, {});
  }
  static Mechanism linear_gaussian(std::vector<int> parents, std::vector<double> weights,
                                   double std, double bias = 0.0);
  static Mechanism plateau(double a, double b) { return Mechanism(Plateau{a, b}, {}); }

  const Family& family() const { return family_; }
  const std::vector<int>& parents() const { return parents_; }
  std::string family_name() const;

  double log_prob(double z, std::span<const double> zpa) const;
  /// ∂/∂z log p(z | z_pa). Throws NonDifferentiablePoint at plateau breakpoints.
  double score(double z, std::span<const double> zpa) const;
  /// Score with respect to z (return value) and to the parents (written to `gpa`).
  double score_full(double z, std::span<const double> zpa, std::span<double> gpa) const;
  /// ∂²/∂z² log p(z | z_pa). Only for C² families; others throw ConfigError.
  double score_derivative(double z, std::span<const double> zpa) const;
  double sample(std::span<const double> zpa, Rng& rng) const;

 private:
  Family family_;
  std::vector<int> parents_;
};

void to_json(nlohmann::json& j, const Mechanism& m);
Mechanism mechanism_from_json(const nlohmann::json& j);

}  // namespace cauca
