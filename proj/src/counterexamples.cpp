#include "cauca/counterexamples.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace cauca {
namespace {

Matrix rotation(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return Matrix{{c, -s}, {s, c}};
}

/// Uniform point in the annulus r ∈ [r_lo, r_hi] around (cx, cy).
std::pair<double, double> disk_point(const RotationAutomorphism& phi, double r_lo, double r_hi, Rng& rng) {
  std::uniform_real_distribution<double> u01;
  const double r = std::sqrt(r_lo * r_lo + (r_hi * r_hi - r_lo * r_lo) * u01(rng));
  const double t = 2.0 * std::numbers::pi * u01(rng);
  return {phi.cx + r * std::cos(t), phi.cy + r * std::sin(t)};
}

void check_contained(const LatentCbn& cbn, const RotationAutomorphism& phi) {
  const Dag& g = cbn.graph();
  for (int node : {phi.i, phi.j}) {
    if (!g.parents(node).empty() || !g.children(node).empty())
      throw ConfigError("automorphism acts on node " + std::to_string(node + 1) + ", which has graph edges");
    for (int k = 0; k < cbn.num_regimes(); ++k) {
      const auto* p = std::get_if<Plateau>(&cbn.regime_mechanism(k, node).family());
      if (!p) throw ConfigError("automorphism acts on a node without a plateau mechanism");
      const double end = p->plateau_end();
      const double centre = node == phi.i ? phi.cx : phi.cy;
      if (centre - phi.radius < 0.0 || centre + phi.radius > end)
        throw ConfigError("rotation disk is not contained in the common plateau");
    }
  }
}

double density(const LatentCbn& cbn, int k, const Vector& z) { return std::exp(log_density(cbn, k, z)); }

}  // namespace

Mechanism plateau_density(double a, double b) { return Mechanism(Plateau{a, b}, {}); }

void RotationAutomorphism::validate(int d) const {
  if (d < 2) throw ConfigError("automorphism needs d >= 2");
  if (i < 0 || j < 0 || i >= d || j >= d || i == j) throw ConfigError("invalid acting coordinates");
  if (!(radius > 0.0)) throw ConfigError("automorphism radius must be positive");
  if (!std::isfinite(alpha) || !std::isfinite(cx) || !std::isfinite(cy)) throw ConfigError("non-finite automorphism");
}

RotationAutomorphism RotationAutomorphism::inverse() const {
  RotationAutomorphism inv = *this;
  inv.alpha = -alpha;
  return inv;
}

void to_json(nlohmann::json& j, const RotationAutomorphism& phi) {
  j = {{"nodes", {phi.i + 1, phi.j + 1}},
       {"center", {phi.cx, phi.cy}},
       {"radius", phi.radius},
       {"alpha", phi.alpha}};
}

void from_json(const nlohmann::json& j, RotationAutomorphism& phi) {
  const auto nodes = j.at("nodes").get<std::vector<int>>();
  const auto centre = j.at("center").get<std::vector<double>>();
  if (nodes.size() != 2 || centre.size() != 2) throw ConfigError("automorphism: nodes and center need two entries");
  phi.i = nodes[0] - 1;
  phi.j = nodes[1] - 1;
  phi.cx = centre[0];
  phi.cy = centre[1];
  phi.radius = j.at("radius");
  phi.alpha = j.value("alpha", 3.0);
}

Vector apply_automorphism(const RotationAutomorphism& phi, const Vector& z) {
  phi.validate(static_cast<int>(z.size()));
  const double ux = z(phi.i) - phi.cx, uy = z(phi.j) - phi.cy;
  const double r = std::hypot(ux, uy);
  Vector out = z;
  if (r >= phi.radius || r == 0.0 || phi.alpha == 0.0) return out;
  const double theta = phi.alpha * (r - phi.radius);
  const double c = std::cos(theta), s = std::sin(theta);
  out(phi.i) = phi.cx + c * ux - s * uy;
  out(phi.j) = phi.cy + s * ux + c * uy;
  return out;
}

Matrix apply_automorphism_batch(const RotationAutomorphism& phi, const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Index r = 0; r < z.rows(); ++r) out.row(r) = apply_automorphism(phi, z.row(r).transpose()).transpose();
  return out;
}

Matrix automorphism_jacobian(const RotationAutomorphism& phi, const Vector& z) {
  phi.validate(static_cast<int>(z.size()));
  Matrix jac = Matrix::Identity(z.size(), z.size());
  const Vector u{{z(phi.i) - phi.cx, z(phi.j) - phi.cy}};
  const double r = u.norm();
  if (r >= phi.radius) return jac;
  // D(Rot(θ(u)) u) = Rot(θ) (I + α K u uᵀ / r), K the 90° generator; the
  // second term vanishes at the centre.
  Matrix block = rotation(phi.alpha * (r - phi.radius));
  if (r > 0.0) {
    const Matrix k{{0.0, -1.0}, {1.0, 0.0}};
    block = block * (Matrix::Identity(2, 2) + phi.alpha * k * u * u.transpose() / r);
  }
  jac(phi.i, phi.i) = block(0, 0);
  jac(phi.i, phi.j) = block(0, 1);
  jac(phi.j, phi.i) = block(1, 0);
  jac(phi.j, phi.j) = block(1, 1);
  return jac;
}

LatentCbn make_plateau_cbn(int d, double a, double b, double c, double dd) {
  if (d < 2) throw ConfigError("plateau CBN needs d >= 2");
  std::vector<Mechanism> mechs;
  for (int i = 0; i < d; ++i) mechs.push_back(i < 2 ? plateau_density(a, b) : Mechanism(GaussianMarginal{0.0, 1.0}, {}));
  LatentCbn cbn(Dag::empty(d), std::move(mechs));
  for (int i = 0; i < d; ++i)
    cbn = add_perfect_intervention(cbn, i, i < 2 ? plateau_density(c, dd) : Mechanism(GaussianMarginal{2.0, 1.0}, {}));
  return cbn;
}

double common_plateau_length(double a, double b, double c, double dd) {
  return std::min(Plateau{a, b}.plateau_end(), Plateau{c, dd}.plateau_end());
}

RotationAutomorphism make_plateau_automorphism(double a, double b, double c, double dd, double alpha) {
  plateau_density(a, b);
  plateau_density(c, dd);
  const double lambda = common_plateau_length(a, b, c, dd);
  RotationAutomorphism phi;
  phi.cx = phi.cy = lambda / 2.0;
  phi.radius = lambda / 2.0;
  phi.alpha = alpha;
  return phi;
}

Matrix stratified_points(const LatentCbn& cbn, const RotationAutomorphism& phi, Index n, Rng& rng) {
  phi.validate(cbn.dim());
  if (n < 4) throw ConfigError("need at least 4 stratified points");
  Matrix z = sample(cbn, 0, n, rng);
  std::uniform_real_distribution<double> square(-phi.radius, phi.radius);
  std::uniform_real_distribution<double> wide(-3.0, 3.0);
  const Index quarter = n / 4;
  for (Index r = 0; r < n; ++r) {
    const Index stratum = std::min<Index>(r / quarter, 3);
    if (stratum == 0) {
      const auto [x, y] = disk_point(phi, 0.0, phi.radius, rng);
      z(r, phi.i) = x;
      z(r, phi.j) = y;
    } else if (stratum == 1) {
      z(r, phi.i) = phi.cx + square(rng);
      z(r, phi.j) = phi.cy + square(rng);
    } else if (stratum == 3) {
      z(r, phi.i) = wide(rng);
      z(r, phi.j) = wide(rng);
    }
  }
  return z;
}

void to_json(nlohmann::json& j, const PreservationReport& r) {
  j = {{"residual_per_regime", r.residual}, {"max_residual", r.max_residual}, {"points", r.points}};
}

PreservationReport verify_preservation(const LatentCbn& cbn, const RotationAutomorphism& phi, Index n_points,
                                       Rng& rng, bool require_contained) {
  phi.validate(cbn.dim());
  if (require_contained) check_contained(cbn, phi);
  const Matrix z = stratified_points(cbn, phi, n_points, rng);
  PreservationReport out;
  out.points = z.rows();
  out.residual.assign(cbn.num_regimes(), 0.0);
  for (Index r = 0; r < z.rows(); ++r) {
    const Vector zr = z.row(r).transpose();
    const Vector moved = apply_automorphism(phi, zr);
    const double det = std::abs(automorphism_jacobian(phi, zr).determinant());
    for (int k = 0; k < cbn.num_regimes(); ++k) {
      const double res = std::abs(density(cbn, k, zr) - density(cbn, k, moved) * det);
      out.residual[k] = std::max(out.residual[k], res);
    }
  }
  for (double v : out.residual) out.max_residual = std::max(out.max_residual, v);
  return out;
}

void to_json(nlohmann::json& j, const SpuriousSolutionReport& r) {
  j = {{"preservation", r.preservation},
       {"max_density_mismatch", r.max_density_mismatch},
       {"densities_agree", r.densities_agree},
       {"ambiguity", r.ambiguity},
       {"interior_offdiagonal", r.interior_offdiagonal},
       {"entangled", r.entangled},
       {"verdict", r.verdict}};
}

SpuriousSolutionReport demonstrate_spurious_solution(const LatentCbn& cbn, const MixingFunction& f,
                                                     const RotationAutomorphism& phi, Index n_points, Rng& rng,
                                                     double tol) {
  if (f.dim() != cbn.dim()) throw ConfigError("mixing and CBN dimensions differ");
  SpuriousSolutionReport out;
  out.preservation = verify_preservation(cbn, phi, n_points, rng, false);

  // (i) Observed densities under f and under f∘φ⁻¹, whose inverse is φ∘f⁻¹.
  const Matrix x = f.forward_batch(stratified_points(cbn, phi, n_points, rng));
  for (Index r = 0; r < x.rows(); ++r) {
    const Vector z = f.inverse(x.row(r).transpose());
    const double log_jf = f.log_abs_det_jacobian(z);
    const Vector moved = apply_automorphism(phi, z);
    const double log_dphi = std::log(std::abs(automorphism_jacobian(phi, z).determinant()));
    for (int k = 0; k < cbn.num_regimes(); ++k) {
      const double p = std::exp(log_density(cbn, k, z) - log_jf);
      const double q = std::exp(log_density(cbn, k, moved) + log_dphi - log_jf);
      out.max_density_mismatch = std::max(out.max_density_mismatch, std::abs(p - q));
    }
  }
  out.densities_agree = out.max_density_mismatch <= tol;

  // (ii) φ itself, at interior disk points away from the centre and the rim.
  const Index m = std::max<Index>(n_points / 10, 10);
  Matrix inner = sample(cbn, 0, m, rng);
  for (Index r = 0; r < m; ++r) {
    const auto [px, py] = disk_point(phi, 0.1 * phi.radius, 0.9 * phi.radius, rng);
    inner(r, phi.i) = px;
    inner(r, phi.j) = py;
    const Matrix jac = automorphism_jacobian(phi, inner.row(r).transpose());
    out.interior_offdiagonal =
        std::max(out.interior_offdiagonal, std::min(std::abs(jac(phi.i, phi.j)), std::abs(jac(phi.j, phi.i))));
  }
  out.ambiguity = classify_map([&](const Vector& z) { return apply_automorphism(phi, z); }, cbn.graph(), inner);
  out.entangled = out.ambiguity.kind == AmbiguityKind::kNone && out.interior_offdiagonal > 0.1;
  out.verdict = out.densities_agree && out.entangled ? "non-identifiable without interventional discrepancy" : "not spurious";
  return out;
}

void write_automorphism_csv(const std::filesystem::path& file, const RotationAutomorphism& phi, const Matrix& z) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + file.string());
  out.precision(17);
  const Index d = z.cols();
  for (Index c = 0; c < d; ++c) out << (c ? "," : "") << 'z' << c + 1;
  for (Index c = 0; c < d; ++c) out << ",phi" << c + 1;
  out << '\n';
  for (Index r = 0; r < z.rows(); ++r) {
    const Vector zr = z.row(r).transpose();
    const Vector p = apply_automorphism(phi, zr);
    for (Index c = 0; c < d; ++c) out << (c ? "," : "") << zr(c);
    for (Index c = 0; c < d; ++c) out << ',' << p(c);
    out << '\n';
  }
}

}  // namespace cauca
