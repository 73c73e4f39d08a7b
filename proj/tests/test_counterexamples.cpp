#include "doctest.h"

#include "cauca/counterexamples.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace cauca;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kA = 4 * kPi, kB = 4 * kPi, kC = 9 * kPi, kD = 9 * kPi;

double fd_det(const RotationAutomorphism& phi, const Vector& z, double h = 1e-6) {
  Matrix j(z.size(), z.size());
  for (Index c = 0; c < z.size(); ++c) {
    Vector p = z, m = z;
    p(c) += h;
    m(c) -= h;
    j.col(c) = (apply_automorphism(phi, p) - apply_automorphism(phi, m)) / (2 * h);
  }
  return j.determinant();
}

}  // namespace

TEST_CASE("plateau density integrates to one") {
  using boost::math::quadrature::gauss_kronrod;
  Rng rng(3);
  std::uniform_real_distribution<double> rate(1.2 * kPi, 40.0);
  for (int t = 0; t < 20; ++t) {
    const double a = t == 0 ? kA : rate(rng), b = t == 0 ? kB : rate(rng);
    const Mechanism m = plateau_density(a, b);
    const double end = std::get<Plateau>(m.family()).plateau_end();
    auto pdf = [&](double z) { return std::exp(m.log_prob(z, {})); };
    double err = 0.0;
    const double left = gauss_kronrod<double, 61>::integrate(pdf, -std::numeric_limits<double>::infinity(), 0.0, 15, 1e-14, &err);
    const double mid = gauss_kronrod<double, 61>::integrate(pdf, 0.0, end, 15, 1e-14, &err);
    const double right = gauss_kronrod<double, 61>::integrate(pdf, end, std::numeric_limits<double>::infinity(), 15, 1e-14, &err);
    CHECK(std::abs(left + mid + right - 1.0) <= 1e-10);
    if (t == 0) {
      CHECK(end == doctest::Approx(0.5).epsilon(1e-15));
      CHECK(left == doctest::Approx(0.25).epsilon(1e-12));
    }
    CHECK(pdf(0.5 * end) == 1.0);
  }
  CHECK_THROWS_AS(plateau_density(kPi, 10.0), ConfigError);
  CHECK_THROWS_AS(plateau_density(10.0, 2.0), ConfigError);
}

TEST_CASE("rotation automorphism geometry") {
  const RotationAutomorphism phi = make_plateau_automorphism(kA, kB, kC, kD);
  CHECK(phi.cx == doctest::Approx(0.25));
  CHECK(phi.radius == doctest::Approx(0.25));
  CHECK(phi.alpha == 3.0);
  Rng rng(4);
  std::uniform_real_distribution<double> u01;

  SUBCASE("alpha zero is the identity") {
    RotationAutomorphism id = phi;
    id.alpha = 0.0;
    for (int t = 0; t < 100; ++t) {
      const Vector z{{u01(rng), u01(rng)}};
      CHECK(apply_automorphism(id, z) == z);
    }
  }
  SUBCASE("centre and boundary") {
    const Vector c{{phi.cx, phi.cy}};
    CHECK(apply_automorphism(phi, c) == c);
    const Vector rim{{phi.cx + phi.radius, phi.cy}};
    CHECK(apply_automorphism(phi, rim) == rim);
    for (int t = 0; t < 200; ++t) {
      const double ang = 2 * kPi * u01(rng);
      const double r = phi.radius - 1e-6 * u01(rng);
      const Vector z{{phi.cx + r * std::cos(ang), phi.cy + r * std::sin(ang)}};
      CHECK((apply_automorphism(phi, z) - z).norm() <= 1e-4);
    }
  }
  SUBCASE("unit determinant and analytic jacobian") {
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const double ang = 2 * kPi * u01(rng);
      const double r = phi.radius * (0.01 + 0.98 * std::sqrt(u01(rng)));
      const Vector z{{phi.cx + r * std::cos(ang), phi.cy + r * std::sin(ang)}};
      worst = std::max(worst, std::abs(std::abs(fd_det(phi, z)) - 1.0));
      const Matrix jac = automorphism_jacobian(phi, z);
      Matrix fd(2, 2);
      for (int c = 0; c < 2; ++c) {
        Vector p = z, m = z;
        p(c) += 1e-6;
        m(c) -= 1e-6;
        fd.col(c) = (apply_automorphism(phi, p) - apply_automorphism(phi, m)) / 2e-6;
      }
      CHECK((jac - fd).cwiseAbs().maxCoeff() <= 1e-6);
    }
    CHECK(worst <= 1e-5);
  }
  SUBCASE("inverse map") {
    const RotationAutomorphism inv = phi.inverse();
    for (int t = 0; t < 1000; ++t) {
      const Vector z{{-0.2 + 0.9 * u01(rng), -0.2 + 0.9 * u01(rng), u01(rng)}};
      CHECK((apply_automorphism(inv, apply_automorphism(phi, z)) - z).norm() <= 1e-10);
    }
  }
  SUBCASE("json round trip") {
    RotationAutomorphism other = phi;
    other.i = 2;
    other.j = 0;
    const RotationAutomorphism back = nlohmann::json(other).get<RotationAutomorphism>();
    CHECK(back.i == 2);
    CHECK(back.j == 0);
    CHECK(back.cx == other.cx);
    CHECK(back.radius == other.radius);
  }
  SUBCASE("invalid configurations") {
    RotationAutomorphism bad = phi;
    bad.j = 0;
    CHECK_THROWS_AS(apply_automorphism(bad, Vector::Zero(2)), ConfigError);
    bad = phi;
    bad.radius = 0.0;
    CHECK_THROWS_AS(apply_automorphism(bad, Vector::Zero(2)), ConfigError);
  }
}

TEST_CASE("density preservation") {
  const LatentCbn cbn = make_plateau_cbn(2, kA, kB, kC, kD);
  const RotationAutomorphism phi = make_plateau_automorphism(kA, kB, kC, kD);
  Rng rng(5);
  CHECK(cbn.num_regimes() == 3);

  const PreservationReport ok = verify_preservation(cbn, phi, 10000, rng);
  CHECK(ok.points == 10000);
  REQUIRE(ok.residual.size() == 3);
  for (double r : ok.residual) CHECK(r <= 1e-6);

  RotationAutomorphism straddle = phi;
  straddle.cx = 0.5;
  CHECK_THROWS_AS(verify_preservation(cbn, straddle, 1000, rng), ConfigError);
  CHECK(verify_preservation(cbn, straddle, 1000, rng, false).max_residual > 1e-3);

  RotationAutomorphism still = phi;
  still.alpha = 0.0;
  CHECK(verify_preservation(cbn, still, 1000, rng).max_residual == 0.0);

  // Embedded in d = 4 with Gaussian nodes elsewhere.
  const LatentCbn wide = make_plateau_cbn(4, kA, kB, kC, kD);
  CHECK(wide.num_regimes() == 5);
  CHECK(verify_preservation(wide, phi, 4000, rng).max_residual <= 1e-6);
}

TEST_CASE("spurious solution") {
  Rng rng(6);
  const MixingFunction f = sample_mixing(2, 2, rng);
  const RotationAutomorphism phi = make_plateau_automorphism(kA, kB, kC, kD);

  const SpuriousSolutionReport r = demonstrate_spurious_solution(make_plateau_cbn(2, kA, kB, kC, kD), f, phi, 4000, rng);
  CHECK(r.densities_agree);
  CHECK(r.max_density_mismatch <= 1e-6);
  CHECK(r.ambiguity.kind == AmbiguityKind::kNone);
  CHECK(r.interior_offdiagonal > 0.1);
  CHECK(r.verdict == "non-identifiable without interventional discrepancy");

  // A Gaussian CBN with the same rotation is not preserved.
  const LatentCbn gauss = add_per_node_perfect_interventions(make_linear_gaussian_scm(Dag::empty(2), 1.0, rng), rng);
  const SpuriousSolutionReport g = demonstrate_spurious_solution(gauss, f, phi, 2000, rng);
  CHECK(!g.densities_agree);
  CHECK(g.verdict == "not spurious");

  RotationAutomorphism id = phi;
  id.alpha = 0.0;
  const SpuriousSolutionReport i = demonstrate_spurious_solution(make_plateau_cbn(2, kA, kB, kC, kD), f, id, 2000, rng);
  CHECK(i.densities_agree);
  CHECK(i.ambiguity.kind == AmbiguityKind::kScaling);
  CHECK(i.verdict == "not spurious");
}

TEST_CASE("plateau mechanisms violate the discrepancy check on their overlap") {
  const DiscrepancyReport r = check_interventional_discrepancy(plateau_density(kA, kB), plateau_density(kC, kD));
  CHECK(r.verdict == Verdict::kViolated);
  CHECK(r.violation_lo[0] >= 0.0);
}

TEST_CASE("automorphism csv") {
  const RotationAutomorphism phi = make_plateau_automorphism(kA, kB, kC, kD);
  const auto file = std::filesystem::temp_directory_path() / "cauca_phi.csv";
  const Matrix z{{0.2, 0.3}, {1.0, 1.0}};
  write_automorphism_csv(file, phi, z);
  std::ifstream in(file);
  std::string header;
  std::getline(in, header);
  CHECK(header == "z1,z2,phi1,phi2");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 2);
}
