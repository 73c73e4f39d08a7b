#include "doctest.h"

#include "cauca/mixing.hpp"

using namespace cauca;

namespace {

// Central-difference Jacobian.
Matrix fd_jacobian(const MixingFunction& f, const Vector& z, double h = 1e-6) {
  Matrix j(z.size(), z.size());
  for (Index c = 0; c < z.size(); ++c) {
    Vector p = z, m = z;
    p(c) += h;
    m(c) -= h;
    j.col(c) = (f.forward(p) - f.forward(m)) / (2.0 * h);
  }
  return j;
}

Vector randn(int d, Rng& rng) {
  std::normal_distribution<double> n01;
  Vector z(d);
  for (int i = 0; i < d; ++i) z(i) = n01(rng);
  return z;
}

}  // namespace

TEST_CASE("scalar mixing") {
  const MixingFunction f({Matrix::Constant(1, 1, 0.7)});
  CHECK(f.forward(Vector::Constant(1, 2.0))(0) == doctest::Approx(std::tanh(1.4) + 0.14).epsilon(1e-15));

  const MixingFunction unit({Matrix::Identity(1, 1)});
  CHECK(unit.forward(Vector::Ones(1))(0) == doctest::Approx(0.861594).epsilon(1e-6));
  // Scalar Newton oracle, written independently of the library inverse.
  double z = 0.0;
  for (int i = 0; i < 50; ++i) z -= (std::tanh(z) + 0.1 * z - 0.861594) / (1.1 - std::tanh(z) * std::tanh(z));
  CHECK(std::abs(unit.inverse(Vector::Constant(1, 0.861594))(0) - z) < 1e-10);
  CHECK(std::abs(z - 1.0) < 1e-6);
}

TEST_CASE("origin is a fixed point") {
  Rng rng(20);
  const MixingFunction f = sample_mixing(4, 3, rng);
  CHECK(f.forward(Vector::Zero(4)).norm() == 0.0);
  CHECK(f.inverse(Vector::Zero(4)).norm() == 0.0);
  const MixingFunction g = sample_mixing(3, 1, rng);
  CHECK(g.log_abs_det_jacobian(Vector::Zero(3)) ==
        doctest::Approx(std::log(std::abs(g.layers()[0].determinant())) + 3 * std::log(1.1)).epsilon(1e-14));
}

TEST_CASE("sampled layers respect the determinant floor") {
  Rng rng(21);
  for (int t = 0; t < 1000; ++t) {
    const MixingFunction f = sample_mixing(3, 2, rng);
    for (const Matrix& a : f.layers()) {
      CHECK(std::abs(a.determinant()) >= 0.1);
      CHECK(a.minCoeff() >= 0.0);
      CHECK(a.maxCoeff() < 1.0);
    }
    for (int p = 0; p < 100; ++p) {
      const Vector z = randn(3, rng);
      REQUIRE((f.inverse(f.forward(z)) - z).lpNorm<Eigen::Infinity>() <= 1e-6);
    }
  }
}

TEST_CASE("batch forward equals per-row forward") {
  Rng rng(22);
  const MixingFunction f = sample_mixing(5, 3, rng);
  Matrix z(20, 5);
  for (int r = 0; r < 20; ++r) z.row(r) = randn(5, rng).transpose();
  const Matrix x = f.forward_batch(z);
  for (int r = 0; r < 20; ++r)
    CHECK((x.row(r).transpose() - f.forward(Vector(z.row(r).transpose()))).norm() < 1e-14);
}

TEST_CASE("round trip across dimensions and depths") {
  Rng rng(23);
  for (int d = 2; d <= 8; ++d)
    for (int m = 1; m <= 4; ++m) {
      const MixingFunction f = sample_mixing(d, m, rng);
      Matrix z(1000, d);
      for (int r = 0; r < 1000; ++r) z.row(r) = randn(d, rng).transpose();
      CHECK((f.inverse_batch(f.forward_batch(z)) - z).lpNorm<Eigen::Infinity>() <= 1e-6);
    }
}

TEST_CASE("log-det matches finite differences") {
  Rng rng(24);
  for (int d = 1; d <= 4; ++d)
    for (int m = 1; m <= 3; ++m) {
      const MixingFunction f = sample_mixing(d, m, rng);
      for (int p = 0; p < 5; ++p) {
        const Vector z = randn(d, rng);
        const double fd = std::log(std::abs(fd_jacobian(f, z).determinant()));
        const double an = f.log_abs_det_jacobian(z);
        CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(an)));
      }
    }
}

TEST_CASE("log-det composes layer by layer") {
  Rng rng(25);
  const MixingFunction f = sample_mixing(3, 2, rng);
  const MixingFunction f1({f.layers()[0]}), f2({f.layers()[1]});
  const Vector z = randn(3, rng);
  CHECK(f.log_abs_det_jacobian(z) ==
        doctest::Approx(f1.log_abs_det_jacobian(z) + f2.log_abs_det_jacobian(f1.forward(z))).epsilon(1e-13));
}

TEST_CASE("inverse bracket always contains the root") {
  for (double y = -50.0; y <= 50.0; y += 0.37) {
    const double lo = std::min(y / 1.1, y / 0.1) - 1.0, hi = std::max(y / 1.1, y / 0.1) + 1.0;
    CHECK(leaky_tanh(lo) <= y);
    CHECK(leaky_tanh(hi) >= y);
    CHECK(std::abs(leaky_tanh(leaky_tanh_inverse(y)) - y) <= 1e-13 * std::max(1.0, std::abs(y)));
  }
}

TEST_CASE("mixing json round trip is exact") {
  Rng rng(26);
  const MixingFunction f = sample_mixing(3, 2, rng);
  nlohmann::json j = f;
  const MixingFunction back = nlohmann::json::parse(j.dump()).get<MixingFunction>();
  for (int m = 0; m < 2; ++m) CHECK(back.layers()[m] == f.layers()[m]);
  CHECK(j["M"] == 2);
}
