#pragma once

#include "cauca/cbn.hpp"
#include "cauca/core.hpp"
#include "cauca/diagnostics.hpp"
#include "cauca/mixing.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cauca {

/// Parentless plateau mechanism p_{a,b}; ConfigError unless √(π/a) < 1 and √(π/b) < 1.
Mechanism plateau_density(double a, double b);

/// Radius-dependent rotation of the coordinate pair (i, j) around `center`:
/// inside the open disk of radius `radius` the pair is rotated by
/// α (‖z_pair − c‖ − R); everything else is left alone.
struct RotationAutomorphism {
  int i = 0;
  int j = 1;
  double cx = 0.0;
  double cy = 0.0;
  double radius = 1.0;
  double alpha = 3.0;

  void validate(int d) const;
  /// The inverse map (α → −α).
  RotationAutomorphism inverse() const;
};

void to_json(nlohmann::json& j, const RotationAutomorphism& phi);
void from_json(const nlohmann::json& j, RotationAutomorphism& phi);

Vector apply_automorphism(const RotationAutomorphism& phi, const Vector& z);
Matrix apply_automorphism_batch(const RotationAutomorphism& phi, const Matrix& z);
/// Analytic Jacobian; the identity outside the disk, Rot(−αR) on the acting pair at the centre.
Matrix automorphism_jacobian(const RotationAutomorphism& phi, const Vector& z);

/// Two plateau nodes with mechanisms p_{a,b} and perfect interventions
/// p_{c,d} (regime k intervenes node k−1). Nodes 2..d−1, if any, are N(0, 1)
/// with interventions N(2, 1). Empty graph.
LatentCbn make_plateau_cbn(int d, double a, double b, double c, double dd);

/// Side of the common plateau square: min over (a,b) and (c,d) of the plateau length.
double common_plateau_length(double a, double b, double c, double dd);

/// The rotation on nodes (0, 1) centred in the common plateau square:
/// c = (λ/2, λ/2), R = λ/2.
RotationAutomorphism make_plateau_automorphism(double a, double b, double c, double dd, double alpha = 3.0);

/// Stratified latent points: a quarter each in the disk, in the common
/// plateau square, from the regime-0 law and uniform on a wide box covering
/// the tails. Non-acting coordinates come from the regime-0 law.
Matrix stratified_points(const LatentCbn& cbn, const RotationAutomorphism& phi, Index n, Rng& rng);

struct PreservationReport {
  std::vector<double> residual;   // per regime, max |p^k(z) − p^k(φ(z))·|det Dφ(z)||
  double max_residual = 0.0;
  Index points = 0;
};

void to_json(nlohmann::json& j, const PreservationReport& r);

/// Density-preservation residuals of φ for every regime of `cbn`.
/// With `require_contained`, throws ConfigError unless both acting nodes are
/// isolated plateau nodes in every regime and the disk lies in the common plateau.
PreservationReport verify_preservation(const LatentCbn& cbn, const RotationAutomorphism& phi, Index n_points,
                                       Rng& rng, bool require_contained = true);

struct SpuriousSolutionReport {
  PreservationReport preservation;
  /// max over regimes and observation points of |p_f^k(x) − p_{f∘φ⁻¹}^k(x)|.
  double max_density_mismatch = 0.0;
  bool densities_agree = false;
  AmbiguityClass ambiguity;
  /// max over disk points of the smallest |off-diagonal| entry of Dφ in the acting pair.
  double interior_offdiagonal = 0.0;
  bool entangled = false;
  std::string verdict;
};

void to_json(nlohmann::json& j, const SpuriousSolutionReport& r);

/// Checks that (f, P^k) and (f∘φ⁻¹, P^k) give the same observed densities
/// (within `tol`) while φ is not an element-wise reparametrization.
SpuriousSolutionReport demonstrate_spurious_solution(const LatentCbn& cbn, const MixingFunction& f,
                                                     const RotationAutomorphism& phi, Index n_points, Rng& rng,
                                                     double tol = 1e-6);

/// CSV with columns z1..zd, phi1..phid.
void write_automorphism_csv(const std::filesystem::path& file, const RotationAutomorphism& phi, const Matrix& z);

}  // namespace cauca
