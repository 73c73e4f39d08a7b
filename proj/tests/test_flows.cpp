#include "doctest.h"

#include "cauca/flows.hpp"

#include <functional>

using namespace cauca;

namespace {

Matrix randn(Index n, int d, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n01(0.0, scale);
  Matrix m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}

void perturb(Vector& p, Rng& rng, double scale) {
  std::normal_distribution<double> n01(0.0, scale);
  for (Index i = 0; i < p.size(); ++i) p(i) += n01(rng);
}

Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-6) {
  const Vector f0 = f(x);
  Matrix j(f0.size(), x.size());
  for (Index c = 0; c < x.size(); ++c) {
    Vector p = x, m = x;
    p(c) += h;
    m(c) -= h;
    j.col(c) = (f(p) - f(m)) / (2.0 * h);
  }
  return j;
}

EncoderModel spline_model(const Dag& g, std::vector<std::vector<int>> targets, Rng& rng, int blocks = 2) {
  FlowConfig cfg;
  cfg.blocks = blocks;
  cfg.hidden = 8;
  return EncoderModel(make_spline_flow(g.size(), cfg, rng), std::make_unique<GaussianCbnBase>(g, targets));
}

std::vector<std::vector<int>> per_node(int d) {
  std::vector<std::vector<int>> t;
  for (int i = 0; i < d; ++i) t.push_back({i});
  return t;
}

std::vector<int> labels(Index n, int k_max) {
  std::vector<int> r(n);
  for (Index i = 0; i < n; ++i) r[i] = static_cast<int>(i % (k_max + 1));
  return r;
}

// Directional central differences of the objective against the analytic gradient.
double max_directional_error(const EncoderModel& model, const Matrix& x, std::span<const int> regimes,
                             Rng& rng, int directions = 10, double h = 1e-5) {
  Vector grad;
  model.objective_and_gradient(x, regimes, Vector(), grad);
  const Vector theta = model.get_params();
  const auto mask = model.frozen_mask();
  EncoderModel probe = model;
  double worst = 0.0;
  std::normal_distribution<double> n01;
  for (int t = 0; t < directions; ++t) {
    Vector v(theta.size());
    for (Index i = 0; i < v.size(); ++i) v(i) = mask[i] ? 0.0 : n01(rng);
    v.normalize();
    Vector g;
    probe.set_params(theta + h * v);
    const double fp = probe.objective_and_gradient(x, regimes, Vector(), g);
    probe.set_params(theta - h * v);
    const double fm = probe.objective_and_gradient(x, regimes, Vector(), g);
    const double fd = (fp - fm) / (2.0 * h);
    const double an = grad.dot(v);
    worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-3));
  }
  return worst;
}

}  // namespace

TEST_CASE("spline is the identity at zero raw parameters") {
  SplineConfig cfg;
  std::vector<double> raw(cfg.raw_size(), 0.0);
  for (double x = -6.0; x <= 6.0; x += 0.173) {
    double ld;
    CHECK(std::abs(spline_forward(x, raw.data(), cfg, &ld) - x) < 1e-12);
    CHECK(std::abs(ld) < 1e-12);
  }
}

TEST_CASE("spline monotonicity, inverse and adjoint") {
  SplineConfig cfg;
  Rng rng(30);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> raw(cfg.raw_size());
    for (double& r : raw) r = 1.5 * n01(rng);
    double prev = -1e300;
    for (double x = -7.0; x <= 7.0; x += 0.01) {
      double ld, ldi;
      const double y = spline_forward(x, raw.data(), cfg, &ld);
      CHECK(y > prev);
      prev = y;
      const double back = spline_inverse(y, raw.data(), cfg, &ldi);
      CHECK(std::abs(back - x) < 1e-9);
      CHECK(std::abs(ld - ldi) < 1e-8);
    }
    // log-derivative against finite differences, gradients against central differences.
    for (int p = 0; p < 10; ++p) {
      const double x = 4.5 * (2.0 * std::uniform_real_distribution<double>()(rng) - 1.0);
      double ld, lp, lm;
      const double h = 1e-6;
      spline_forward(x, raw.data(), cfg, &ld);
      const double slope = (spline_forward(x + h, raw.data(), cfg, &lp) - spline_forward(x - h, raw.data(), cfg, &lm)) / (2 * h);
      CHECK(std::abs(slope - std::exp(ld)) <= 1e-4 * std::exp(ld));

      const double gy = n01(rng), gl = n01(rng);
      std::vector<double> graw(raw.size(), 0.0);
      const double gx = spline_backward(x, raw.data(), cfg, gy, gl, graw.data());
      auto loss = [&](double xv, const std::vector<double>& r) {
        double l;
        const double y = spline_forward(xv, r.data(), cfg, &l);
        return gy * y + gl * l;
      };
      const double e = 1e-6;
      CHECK(std::abs((loss(x + e, raw) - loss(x - e, raw)) / (2 * e) - gx) < 1e-6 * std::max(1.0, std::abs(gx)));
      for (std::size_t i = 0; i < raw.size(); ++i) {
        auto rp = raw, rm = raw;
        rp[i] += e;
        rm[i] -= e;
        const double fd = (loss(x, rp) - loss(x, rm)) / (2 * e);
        CHECK(std::abs(fd - graw[i]) < 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("identity-initialized flow") {
  Rng rng(31);
  const Dag g = Dag::empty(3);
  const EncoderModel model = spline_model(g, {}, rng);
  const Matrix x = randn(50, 3, rng);
  Matrix z;
  Vector ld;
  model.encode(x, z, ld);
  CHECK((z - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ld.cwiseAbs().maxCoeff() < 1e-12);
  const Vector lp = model.log_prob(x, std::vector<int>(50, 0));
  const Vector direct = -0.5 * x.rowwise().squaredNorm().array() - 1.5 * kLog2Pi;
  CHECK((lp - direct).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("LU layer") {
  LuLinear lu(3);
  lu.params().segment(6, 3).setOnes();
  Matrix z;
  Vector ld = Vector::Zero(2);
  lu.forward(Matrix::Ones(2, 3), z, ld, nullptr);
  CHECK(ld(0) == doctest::Approx(3.0));
  CHECK((z - Matrix::Constant(2, 3, std::exp(1.0))).cwiseAbs().maxCoeff() < 1e-14);

  Rng rng(32);
  const Matrix w = (Matrix(3, 3) << 2, 1, 0, 1, 3, 1, 0, 1, 4).finished();
  const Vector b = (Vector(3) << 0.1, -0.2, 0.3).finished();
  lu.set_weight(w, b);
  CHECK((lu.weight() - w).cwiseAbs().maxCoeff() < 1e-14);
  const Matrix x = randn(10, 3, rng);
  ld = Vector::Zero(10);
  lu.forward(x, z, ld, nullptr);
  CHECK(ld(0) == doctest::Approx(std::log(w.determinant())).epsilon(1e-13));
  CHECK((lu.inverse(z) - x).cwiseAbs().maxCoeff() < 1e-13);
  CHECK_THROWS_AS(lu.set_weight(-w, b), ConfigError);
}

TEST_CASE("permutation layer") {
  const Permutation p({2, 0, 1});
  const Matrix x = (Matrix(1, 3) << 1, 2, 3).finished();
  Matrix z;
  Vector ld = Vector::Zero(1);
  p.forward(x, z, ld, nullptr);
  CHECK(z == (Matrix(1, 3) << 3, 1, 2).finished());
  CHECK(p.inverse(z) == x);
  CHECK(ld(0) == 0.0);
  CHECK_THROWS_AS(Permutation({0, 0}), ConfigError);
}

TEST_CASE("flow log-det matches finite-difference Jacobians") {
  Rng rng(33);
  for (int d = 2; d <= 4; ++d) {
    EncoderModel model = spline_model(Dag::empty(d), {}, rng, 3);
    Vector theta = model.get_params();
    perturb(theta, rng, 0.3);
    model.set_params(theta);
    for (int p = 0; p < 20; ++p) {
      const Vector x = randn(1, d, rng).row(0).transpose();
      Matrix z;
      Vector ld;
      model.encode(x.transpose(), z, ld);
      const Matrix j = fd_jacobian([&](const Vector& v) { return Vector(model.encode(v.transpose()).row(0).transpose()); }, x);
      const double fd = std::log(std::abs(j.determinant()));
      CHECK(std::abs(fd - ld(0)) <= 1e-4 * std::max(1.0, std::abs(ld(0))));
    }
  }
}

TEST_CASE("flow round trip including tails") {
  Rng rng(34);
  EncoderModel model = spline_model(Dag::empty(3), {}, rng, 4);
  Vector theta = model.get_params();
  perturb(theta, rng, 0.3);
  model.set_params(theta);
  const Matrix x = randn(1000, 3, rng, 3.0);
  CHECK((model.decode(model.encode(x)) - x).cwiseAbs().maxCoeff() <= 1e-6);
  const Matrix z = randn(1000, 3, rng, 3.0);
  CHECK((model.encode(model.decode(z)) - z).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("Gaussian CBN base") {
  const Dag empty = Dag::empty(3);
  GaussianCbnBase iid(empty, {});
  const std::vector<int> r0{0};
  CHECK(iid.log_prob(Matrix::Zero(1, 3), r0)(0) == doctest::Approx(-1.5 * kLog2Pi));

  const Dag chain(2, {{0, 1}});
  GaussianCbnBase base(chain, {{0}, {1}});
  base.params()(base.alpha_index(0)) = 1.0;
  CHECK(base.log_prob(Matrix::Ones(1, 2), r0)(0) == doctest::Approx(-2.33787706640935).epsilon(1e-13));

  // Regime 2 intervenes on node 2: α̂ is ignored there.
  const Index slot = base.intervention_index(2, 1);
  base.params()(slot) = 0.5;
  const std::vector<int> r2{2};
  const double expect = normal_log_pdf(1.0, 0.0, 1.0) + normal_log_pdf(1.0, 0.5, 1.0);
  CHECK(base.log_prob(Matrix::Ones(1, 2), r2)(0) == doctest::Approx(expect).epsilon(1e-14));
  base.params()(base.alpha_index(0)) = 7.0;
  CHECK(base.log_prob(Matrix::Ones(1, 2), r2)(0) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(base.intervention_index(1, 1) == -1);

  const std::vector<int> bad{3};
  CHECK_THROWS_AS(base.log_prob(Matrix::Ones(1, 2), bad), ConfigError);
  GaussianCbnBase pooled(chain, {{0}, {1}}, true);
  CHECK(pooled.log_prob(Matrix::Ones(1, 2), r2)(0) == pooled.log_prob(Matrix::Ones(1, 2), r0)(0));
}

TEST_CASE("linear flow gradient on d=1 matches the closed form") {
  Rng rng(35);
  EncoderModel model(make_linear_flow(1), std::make_unique<GaussianCbnBase>(Dag::empty(1), std::vector<std::vector<int>>{}));
  const double s = 0.3, b = -0.4;
  // LuLinear(1): no triangular entries, log-diag s, bias b; base: log σ̂.
  Vector full(model.num_params());
  full << s, b, 0.0;
  model.set_params(full);
  const Matrix x = randn(7, 1, rng);
  const std::vector<int> r(7, 0);
  Vector grad;
  const double obj = model.objective_and_gradient(x, r, Vector(), grad);
  double o = 0.0, gs = 0.0, gb = 0.0, glog = 0.0;
  for (int i = 0; i < 7; ++i) {
    const double z = std::exp(s) * x(i, 0) + b;
    o += s - 0.5 * z * z - 0.5 * kLog2Pi;
    gs += 1.0 - z * std::exp(s) * x(i, 0);
    gb += -z;
    glog += z * z - 1.0;
  }
  CHECK(obj == doctest::Approx(o / 7).epsilon(1e-14));
  CHECK(grad(0) == doctest::Approx(gs / 7).epsilon(1e-13));
  CHECK(grad(1) == doctest::Approx(gb / 7).epsilon(1e-13));
  CHECK(grad(2) == doctest::Approx(glog / 7).epsilon(1e-13));
}

TEST_CASE("gradients match central differences for every layer and base kind") {
  Rng rng(36);
  const Dag g(3, {{0, 1}, {1, 2}, {0, 2}});
  const Matrix x = randn(40, 3, rng);
  const auto reg = labels(40, 3);

  SUBCASE("LU only") {
    EncoderModel model(make_linear_flow(3), std::make_unique<GaussianCbnBase>(g, per_node(3)));
    Vector t = model.get_params();
    perturb(t, rng, 0.3);
    model.set_params(t);
    CHECK(max_directional_error(model, x, reg, rng) <= 1e-4);
  }
  SUBCASE("spline coupling + permutation + Gaussian base") {
    EncoderModel model = spline_model(g, per_node(3), rng);
    Vector t = model.get_params();
    perturb(t, rng, 0.3);
    model.set_params(t);
    CHECK(max_directional_error(model, x, reg, rng) <= 1e-4);
  }
  SUBCASE("nonparametric base") {
    FlowConfig cfg;
    cfg.blocks = 1;
    cfg.hidden = 8;
    EncoderModel model(make_spline_flow(3, cfg, rng), std::make_unique<CbnBaseFlow>(g, per_node(3), 8, 2, SplineConfig{}, rng));
    Vector t = model.get_params();
    perturb(t, rng, 0.3);
    model.set_params(t);
    CHECK(max_directional_error(model, x, reg, rng) <= 1e-4);
  }
}

TEST_CASE("frozen parameters get zero gradient") {
  Rng rng(37);
  const Dag g(2, {{0, 1}});
  EncoderModel model = spline_model(g, per_node(2), rng);
  model.base().frozen()[0] = 1;
  const Index offset = model.num_params() - model.base().num_params();
  Vector grad;
  const Matrix x = randn(20, 2, rng);
  model.objective_and_gradient(x, labels(20, 2), Vector(), grad);
  CHECK(grad(offset) == 0.0);
  CHECK(grad.segment(offset + 1, 2).norm() > 0.0);
}

TEST_CASE("non-finite objective is reported as divergence") {
  Rng rng(38);
  EncoderModel model = spline_model(Dag::empty(2), {}, rng);
  Vector grad;
  Matrix x = randn(4, 2, rng);
  x(0, 0) = NAN;
  CHECK_THROWS_AS(model.objective_and_gradient(x, std::vector<int>(4, 0), Vector(), grad), DivergedTraining);
}

TEST_CASE("nonparametric base flow") {
  Rng rng(39);
  const Dag chain(2, {{0, 1}});
  CbnBaseFlow identity(chain, {{0}}, 8, 2, SplineConfig{});
  const std::vector<int> r0{0};
  CHECK(identity.log_prob(Matrix::Zero(1, 2), r0)(0) == doctest::Approx(-kLog2Pi).epsilon(1e-14));

  const Dag g(4, {{0, 1}, {0, 2}, {1, 3}, {2, 3}});
  CbnBaseFlow bf(g, {}, 8, 2, SplineConfig{}, rng);
  Vector t = bf.params();
  perturb(t, rng, 0.5);
  bf.params() = t;
  for (int p = 0; p < 10; ++p) {
    const Vector z = randn(1, 4, rng).row(0).transpose();
    const Matrix j = fd_jacobian([&](const Vector& v) { return bf.transform(v); }, z);
    for (int r = 0; r < 4; ++r)
      for (int c = r + 1; c < 4; ++c) CHECK(std::abs(j(r, c)) < 1e-10);
  }

  // Conditional of node 2 integrates to one: with node 1 intervened its factor is N(0, 1).
  CbnBaseFlow two(chain, {{0}}, 8, 2, SplineConfig{}, rng);
  Vector t2 = two.params();
  perturb(t2, rng, 0.5);
  two.params() = t2;
  for (double z1 : {-1.3, 0.2, 2.0}) {
    const double h = 2e-5;
    const Index n = static_cast<Index>(24.0 / h) + 1;
    Matrix z(n, 2);
    for (Index i = 0; i < n; ++i) z.row(i) << z1, -12.0 + h * static_cast<double>(i);
    const Vector dens = (two.log_prob(z, std::vector<int>(n, 1)).array() - normal_log_pdf(z1, 0.0, 1.0)).exp();
    const double mass = h * (dens.sum() - 0.5 * (dens(0) + dens(n - 1)));
    CHECK(std::abs(mass - 1.0) < 1e-6);
  }
}

TEST_CASE("model json round trip is bit-exact") {
  Rng rng(40);
  const Dag g(3, {{0, 1}, {1, 2}});
  for (int variant = 0; variant < 2; ++variant) {
    std::unique_ptr<BaseDensity> base;
    if (variant == 0) base = std::make_unique<GaussianCbnBase>(g, per_node(3));
    else base = std::make_unique<CbnBaseFlow>(g, per_node(3), 8, 2, SplineConfig{}, rng);
    FlowConfig cfg;
    cfg.blocks = 2;
    cfg.hidden = 8;
    EncoderModel model(make_spline_flow(3, cfg, rng), std::move(base));
    Vector t = model.get_params();
    perturb(t, rng, 0.3);
    model.set_params(t);
    model.base().frozen()[1] = 1;
    const auto text = model_to_json(model).dump();
    const EncoderModel back = model_from_json(nlohmann::json::parse(text));
    CHECK(back.get_params() == model.get_params());
    CHECK(back.frozen_mask() == model.frozen_mask());
    CHECK(model_to_json(back).dump() == text);
    const Matrix x = randn(5, 3, rng);
    CHECK(back.log_prob(x, labels(5, 3)) == model.log_prob(x, labels(5, 3)));
  }
}
