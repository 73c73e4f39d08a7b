#include "doctest.h"

#include "cauca/cbn.hpp"
#include "cauca/diagnostics.hpp"
#include "cauca/flows.hpp"
#include "cauca/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace cauca;

namespace {

Mechanism gauss(double mean, double std = 1.0) { return Mechanism(GaussianMarginal{mean, std}, {}); }

GridSpec small_grid(int n) {
  GridSpec g;
  g.points_per_axis = n;
  return g;
}

double brute_force_assignment(const Matrix& w) {
  std::vector<int> perm(w.rows());
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1e300;
  do {
    double s = 0.0;
    for (Index i = 0; i < w.rows(); ++i) s += w(i, perm[i]);
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<RegimeDataset> observe(const LatentCbn& cbn, const MixingFunction& f, Index n, Rng& rng) {
  std::vector<RegimeDataset> out;
  for (int k = 0; k < cbn.num_regimes(); ++k) {
    RegimeDataset ds;
    ds.regime = k;
    ds.targets = cbn.targets(k);
    ds.z = sample(cbn, k, n, rng);
    ds.x = f.forward_batch(ds.z);
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace

TEST_CASE("grid reduction keeps odd counts") {
  GridSpec g;
  CHECK(effective_points_per_axis(g, 1) == 201);
  CHECK(effective_points_per_axis(g, 2) == 201);
  const int n3 = effective_points_per_axis(g, 3);
  CHECK(n3 % 2 == 1);
  CHECK(std::pow(n3, 3) <= 2e6);
  CHECK(std::pow(n3 + 2, 3) > 2e6);
}

TEST_CASE("interventional discrepancy: shifted Gaussians") {
  const DiscrepancyReport r = check_interventional_discrepancy(gauss(0.0), gauss(2.0));
  CHECK(r.verdict == Verdict::kSatisfied);
  CHECK(r.evaluated == 201);
  CHECK(r.fraction_satisfied == 1.0);
  CHECK(std::abs(r.min_value - 2.0) <= 1e-10);
  CHECK(std::abs(r.max_value - 2.0) <= 1e-10);
  CHECK(r.violation_lo.empty());
}

TEST_CASE("interventional discrepancy: identical mechanisms") {
  const DiscrepancyReport r = check_interventional_discrepancy(gauss(0.5, 2.0), gauss(0.5, 2.0));
  CHECK(r.verdict == Verdict::kViolated);
  CHECK(r.satisfied_points == 0);
  CHECK(r.max_value == 0.0);
  REQUIRE(r.violation_lo.size() == 1);
  CHECK(r.violation_lo[0] == doctest::Approx(-4.0));
  CHECK(r.violation_hi[0] == doctest::Approx(4.0));
}

TEST_CASE("interventional discrepancy: overlapping plateaus") {
  const double pi = 3.14159265358979323846;
  const Mechanism p(Plateau{4 * pi, 4 * pi}, {});
  const Mechanism q(Plateau{9 * pi, 9 * pi}, {});
  const DiscrepancyReport r = check_interventional_discrepancy(p, q);
  const DiscrepancyReport swapped = check_interventional_discrepancy(q, p);
  CHECK(r.verdict == Verdict::kViolated);
  CHECK(r.fraction_satisfied < 0.999);
  REQUIRE(r.violation_lo.size() == 1);
  // Scores agree on the common plateau [0, 1/2] and where the right tails
  // cross, 8π(z − 1/2) = 18π(z − 2/3) at z = 4/5.
  CHECK(r.violation_lo[0] >= -1e-12);
  CHECK(r.violation_hi[0] == doctest::Approx(0.8));
  CHECK(r.evaluated - r.satisfied_points == 13);  // 0.04 .. 0.48 and 0.8
  CHECK(r.skipped == 1);                              // the kink at 0
  CHECK(swapped.fraction_satisfied == r.fraction_satisfied);
  CHECK(swapped.skipped == r.skipped);
}

TEST_CASE("interventional discrepancy over the parent union") {
  // Gap |z0| vanishes on the line z0 = 0: one grid row of 201.
  const Mechanism p(LinearGaussian{{1.0}, 0.0, 1.0}, {0});
  const DiscrepancyReport r = check_interventional_discrepancy(p, gauss(0.0));
  CHECK(r.dim == 2);
  CHECK(r.evaluated == 201 * 201);
  CHECK(r.satisfied_points == 200 * 201);
  CHECK(r.verdict == Verdict::kViolated);
  const DiscrepancyReport swapped = check_interventional_discrepancy(gauss(0.0), p);
  CHECK(swapped.satisfied_points == r.satisfied_points);
}

TEST_CASE("block discrepancy") {
  const Matrix eye = Matrix::Identity(2, 2);
  const BlockDensity q0 = gaussian_block(Vector::Zero(2), eye);
  const BlockDensity q1 = gaussian_block(Vector{{2.0, 0.0}}, eye);
  const BlockDensity q2 = gaussian_block(Vector{{0.0, 2.0}}, eye);

  SUBCASE("determinant is constant") {
    const DiscrepancyReport r = check_block_discrepancy({q0, q1, q2}, small_grid(41));
    CHECK(r.verdict == Verdict::kSatisfied);
    CHECK(std::abs(r.min_value - 4.0) <= 1e-12);
    CHECK(std::abs(r.median_value - 4.0) <= 1e-12);
  }
  SUBCASE("duplicated regime") {
    const DiscrepancyReport r = check_block_discrepancy({q0, q1, q1}, small_grid(41));
    CHECK(r.verdict == Verdict::kViolated);
    CHECK(r.max_value <= 1e-12);
  }
  SUBCASE("independent marginals") {
    const BlockDensity a = independent_block({gauss(0.0), gauss(0.0)});
    const BlockDensity b = independent_block({gauss(0.0, 2.0), gauss(0.0)});
    const BlockDensity c = independent_block({gauss(0.0), gauss(0.0, 2.0)});
    // M = diag(3z1/4, 3z2/4): singular on the axes.
    const DiscrepancyReport r = check_block_discrepancy({a, b, c}, small_grid(41));
    CHECK(r.satisfied_points == 40 * 40);
    CHECK(r.verdict == Verdict::kViolated);
  }
  SUBCASE("wrong regime count") {
    CHECK_THROWS_AS(check_block_discrepancy({q0, q1}), ConfigError);
  }
  SUBCASE("a one-variable block agrees with the pairwise check") {
    const Mechanism p = gauss(0.3, 1.5), q = gauss(-1.0, 0.7);
    const DiscrepancyReport block = check_block_discrepancy({independent_block({p}), independent_block({q})});
    const DiscrepancyReport pair = check_interventional_discrepancy(p, q);
    CHECK(block.satisfied_points == pair.satisfied_points);
    CHECK(std::abs(block.min_value - pair.min_value) <= 1e-12);
  }
}

TEST_CASE("gaussian block density") {
  const Matrix cov{{2.0, 0.5}, {0.5, 1.0}};
  const BlockDensity q = gaussian_block(Vector{{1.0, -1.0}}, cov);
  const Vector z{{0.3, 0.2}};
  const Vector u = z - Vector{{1.0, -1.0}};
  const double expected = -std::log(2 * 3.14159265358979323846) - 0.5 * std::log(cov.determinant()) -
                          0.5 * u.dot(cov.inverse() * u);
  CHECK(q.log_prob(z) == doctest::Approx(expected).epsilon(1e-13));
  CHECK((q.score(z) + cov.inverse() * u).norm() <= 1e-13);
}

TEST_CASE("variability") {
  SUBCASE("shift and scale interventions") {
    // Rows (0, 1) and (3/4, 3z/4): determinant −3/4 everywhere.
    const DiscrepancyReport r = check_variability({{gauss(0.0)}, {gauss(1.0)}, {gauss(0.0, 2.0)}});
    CHECK(r.verdict == Verdict::kSatisfied);
    CHECK(r.min_value > 0.1);
  }
  SUBCASE("two shifts are not enough") {
    const DiscrepancyReport r = check_variability({{gauss(0.0)}, {gauss(1.0)}, {gauss(2.0)}});
    CHECK(r.verdict == Verdict::kViolated);
    CHECK(r.max_value <= 1e-12);
  }
  SUBCASE("matrix layout") {
    const Matrix m = variability_matrix({{gauss(0.0)}, {gauss(1.0)}, {gauss(0.0, 2.0)}}, Vector{{0.4}});
    CHECK(m(0, 0) == doctest::Approx(0.0));
    CHECK(m(0, 1) == doctest::Approx(1.0));
    CHECK(m(1, 0) == doctest::Approx(0.75));
    CHECK(m(1, 1) == doctest::Approx(0.3));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(check_variability({{gauss(0.0)}, {gauss(1.0)}}), ConfigError);
    const Mechanism plateau(Plateau{4.0, 4.0}, {});
    CHECK_THROWS_AS(check_variability({{plateau}, {gauss(1.0)}, {gauss(2.0)}}, small_grid(5)), ConfigError);
  }
}

TEST_CASE("mean correlation coefficient") {
  Rng rng(11);
  std::normal_distribution<double> n01;
  Matrix z(500, 4);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = n01(rng);

  CHECK(mcc(z, z) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mcc(z, z, McMode::kIdentity, Correlation::kPearson) == doctest::Approx(1.0).epsilon(1e-12));

  Matrix permuted(z.rows(), 4);
  const int perm[] = {2, 0, 3, 1};
  for (int c = 0; c < 4; ++c) permuted.col(c) = -z.col(perm[c]);
  CHECK(mcc(z, permuted, McMode::kPermutation, Correlation::kPearson) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mcc(z, permuted, McMode::kIdentity, Correlation::kPearson) < 0.3);

  const Matrix cubed = z.array().cube().matrix();
  CHECK(mcc(z, cubed, McMode::kIdentity, Correlation::kSpearman) == 1.0);
  CHECK(mcc(z, cubed, McMode::kIdentity, Correlation::kPearson) < 0.95);

  Matrix constant = z;
  constant.col(2).setConstant(3.0);
  CHECK_THROWS_AS(mcc(z, constant), NumericError);
  CHECK_THROWS_AS(mcc(z.topRows(2), z.topRows(2)), ConfigError);
}

TEST_CASE("spearman handles ties with average ranks") {
  const Matrix a{{1.0}, {2.0}, {2.0}, {3.0}};
  const Matrix b{{10.0}, {20.0}, {20.0}, {30.0}};
  CHECK(abs_correlation_matrix(a, b, Correlation::kSpearman)(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("assignment matches brute force") {
  Rng rng(5);
  std::uniform_real_distribution<double> u01;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    Matrix w(n, n);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = u01(rng);
    const std::vector<int> a = max_weight_assignment(w);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < n; ++i) REQUIRE(sorted[i] == i);
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += w(i, a[i]);
    CHECK(total == doctest::Approx(brute_force_assignment(w)).epsilon(1e-12));
  }
}

TEST_CASE("held-out log-probability gap") {
  Rng rng(21);
  const Dag g(3, {{0, 1}, {1, 2}});
  const LatentCbn cbn = add_per_node_perfect_interventions(make_linear_gaussian_scm(g, 1.0, rng), rng);
  const MixingFunction f = sample_mixing(3, 2, rng);
  const std::vector<RegimeDataset> heldout = observe(cbn, f, 400, rng);
  const LogProbFn truth = truth_log_prob(cbn, f);

  const DeltaLogProb self = delta_log_prob(truth, truth, heldout);
  CHECK(self.mean == 0.0);
  CHECK(self.points == 1600);

  const DeltaLogProb scaled = delta_log_prob(scaled_truth_log_prob(cbn, f, ElementwiseMap::random(3, rng)), truth, heldout);
  CHECK(std::abs(scaled.mean) <= 1e-9);

  // Regime 0 density against the direct formula.
  const Vector lp = truth(heldout[0].x, std::vector<int>(heldout[0].size(), 0));
  const Vector direct =
      log_density_batch(cbn, 0, heldout[0].z) - f.log_abs_det_jacobian_batch(heldout[0].z);
  CHECK((lp - direct).cwiseAbs().maxCoeff() <= 1e-9);

  std::vector<std::vector<int>> targets;
  for (int k = 1; k < cbn.num_regimes(); ++k) targets.push_back(cbn.targets(k));
  FlowConfig cfg;
  cfg.blocks = 2;
  cfg.hidden = 8;
  const EncoderModel untrained(make_spline_flow(3, cfg, rng), std::make_unique<GaussianCbnBase>(g, targets));
  const DeltaLogProb gap = delta_log_prob(model_log_prob(untrained), truth, heldout);
  CHECK(gap.mean + 3.0 * gap.std_error < 0.0);
}

TEST_CASE("ambiguity classification") {
  Rng rng(8);
  const Dag chain(2, {{0, 1}});
  std::normal_distribution<double> n01;
  Matrix pts(50, 2);
  for (Index i = 0; i < pts.size(); ++i) pts.data()[i] = n01(rng);

  SUBCASE("the true inverse is a scaling") {
    const MixingFunction f = sample_mixing(2, 2, rng);
    const AmbiguityClass a = classify_ambiguity([&](const Vector& x) { return f.inverse(x); }, f, chain, pts);
    CHECK(a.kind == AmbiguityKind::kScaling);
    CHECK(a.scaling);
    CHECK(a.ancestral);
    CHECK(a.max_abs_offdiagonal <= 1e-6);
  }
  SUBCASE("element-wise reparametrization") {
    const ElementwiseMap h = ElementwiseMap::random(2, rng);
    CHECK(classify_map([&](const Vector& z) { return h.apply(z); }, chain, pts).kind == AmbiguityKind::kScaling);
  }
  SUBCASE("triangular map along the graph") {
    const auto phi = [](const Vector& z) { return Vector{{z(0), z(1) + 0.5 * z(0) * z(0) + z(0)}}; };
    const AmbiguityClass a = classify_map(phi, chain, pts);
    CHECK(a.kind == AmbiguityKind::kAncestral);
    CHECK(!a.scaling);
    CHECK(a.max_relative_off_ancestral <= 1e-9);
    // The reversed graph makes the same map non-ancestral.
    CHECK(classify_map(phi, Dag(2, {{1, 0}}), pts).kind == AmbiguityKind::kNone);
  }
  SUBCASE("rotation") {
    const auto phi = [](const Vector& z) {
      const double c = std::cos(0.7), s = std::sin(0.7);
      return Vector{{c * z(0) - s * z(1), s * z(0) + c * z(1)}};
    };
    CHECK(classify_map(phi, Dag::empty(2), pts).kind == AmbiguityKind::kNone);
    CHECK(classify_map(phi, Dag::empty(2), pts, 1e-2, {{0, 1}}).kind == AmbiguityKind::kBlock);
  }
  SUBCASE("singular points are flagged") {
    const auto phi = [](const Vector& z) { return Vector{{std::pow(z(0), 5), z(1)}}; };
    Matrix p = pts;
    p(0, 0) = 0.0;
    const AmbiguityClass a = classify_map(phi, Dag::empty(2), p);
    CHECK(a.flagged == 1);
    CHECK(a.points == 49);
    CHECK(a.kind == AmbiguityKind::kScaling);
  }
}
