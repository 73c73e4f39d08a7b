#include "cauca/diagnostics.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cauca {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Iterates a tensor grid, calling visit(point) for each point.
template <class Visit>
void for_each_grid_point(const GridSpec& grid, int dim, int per_axis, Visit&& visit) {
  std::vector<int> idx(dim, 0);
  Vector point(dim);
  const double step = per_axis > 1 ? (grid.hi - grid.lo) / (per_axis - 1) : 0.0;
  while (true) {
    for (int a = 0; a < dim; ++a) point(a) = grid.lo + step * idx[a];
    visit(point);
    int a = dim - 1;
    while (a >= 0 && ++idx[a] == per_axis) idx[a--] = 0;
    if (a < 0) break;
  }
}

std::string describe(const GridSpec& grid, int dim, int per_axis) {
  return "tensor grid [" + std::to_string(grid.lo) + ", " + std::to_string(grid.hi) + "]^" + std::to_string(dim) +
         ", " + std::to_string(per_axis) + " points per axis";
}

/// Tracks the summary statistics shared by all checkers.
struct Tally {
  DiscrepancyReport report;
  std::vector<double> values;

  Tally(const GridSpec& grid, int dim, double tol, double threshold) {
    report.dim = dim;
    report.points_per_axis = effective_points_per_axis(grid, dim);
    report.grid = describe(grid, dim, report.points_per_axis);
    report.tol = tol;
    report.threshold = threshold;
    report.min_value = kInf;
    report.max_value = -kInf;
  }

  void add(const Vector& point, double value) {
    ++report.evaluated;
    values.push_back(value);
    report.min_value = std::min(report.min_value, value);
    report.max_value = std::max(report.max_value, value);
    if (value > report.tol) {
      ++report.satisfied_points;
      return;
    }
    if (report.violation_lo.empty()) {
      report.violation_lo.assign(point.data(), point.data() + point.size());
      report.violation_hi = report.violation_lo;
    }
    for (Index a = 0; a < point.size(); ++a) {
      report.violation_lo[a] = std::min(report.violation_lo[a], point(a));
      report.violation_hi[a] = std::max(report.violation_hi[a], point(a));
    }
  }

  DiscrepancyReport finish() {
    DiscrepancyReport& r = report;
    r.total_points = r.evaluated + r.skipped;
    if (r.evaluated == 0) {
      r.min_value = r.max_value = r.median_value = std::nan("");
      r.verdict = Verdict::kInconclusive;
      return r;
    }
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
    std::nth_element(values.begin(), mid, values.end());
    r.median_value = *mid;
    r.fraction_satisfied = static_cast<double>(r.satisfied_points) / static_cast<double>(r.evaluated);
    r.verdict = r.fraction_satisfied >= r.threshold ? Verdict::kSatisfied : Verdict::kViolated;
    return r;
  }
};

Vector pearson_ready(Vector v) {
  v.array() -= v.mean();
  const double norm = v.norm();
  if (!(norm > 0.0)) throw NumericError("undefined correlation: constant column");
  return v / norm;
}

Vector ranks(const Vector& v) {
  const Index n = v.size();
  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return v(a) < v(b); });
  Vector r(n);
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && v(idx[j + 1]) == v(idx[i])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index t = i; t <= j; ++t) r(idx[t]) = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kSatisfied: return "satisfied";
    case Verdict::kViolated: return "violated";
    default: return "inconclusive";
  }
}

int effective_points_per_axis(const GridSpec& grid, int dim) {
  if (grid.points_per_axis < 1 || dim < 1) throw ConfigError("grid: need at least one point and dimension");
  int n = grid.points_per_axis;
  auto total = [&](int m) { return std::pow(static_cast<double>(m), dim); };
  while (n > 3 && total(n) > static_cast<double>(grid.max_points)) n -= (n % 2 == 1) ? 2 : 1;
  return n;
}

void to_json(nlohmann::json& j, const DiscrepancyReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  j = {{"grid", r.grid},
       {"dim", r.dim},
       {"points_per_axis", r.points_per_axis},
       {"total_points", r.total_points},
       {"evaluated", r.evaluated},
       {"skipped", r.skipped},
       {"satisfied_points", r.satisfied_points},
       {"fraction_satisfied", r.fraction_satisfied},
       {"tol", r.tol},
       {"threshold", r.threshold},
       {"min", num(r.min_value)},
       {"median", num(r.median_value)},
       {"max", num(r.max_value)},
       {"violation_lo", r.violation_lo},
       {"violation_hi", r.violation_hi},
       {"verdict", to_string(r.verdict)}};
}

DiscrepancyReport check_interventional_discrepancy(const Mechanism& p, const Mechanism& p_tilde,
                                                   const GridSpec& grid, double tol, double threshold) {
  std::vector<int> all = p.parents();
  all.insert(all.end(), p_tilde.parents().begin(), p_tilde.parents().end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  auto positions = [&](const Mechanism& m) {
    std::vector<int> pos;
    for (int node : m.parents()) pos.push_back(static_cast<int>(std::lower_bound(all.begin(), all.end(), node) - all.begin()));
    return pos;
  };
  const std::vector<int> pos_p = positions(p), pos_t = positions(p_tilde);
  const int dim = 1 + static_cast<int>(all.size());

  Tally tally(grid, dim, tol, threshold);
  std::vector<double> pa_p(pos_p.size()), pa_t(pos_t.size());
  for_each_grid_point(grid, dim, tally.report.points_per_axis, [&](const Vector& pt) {
    for (std::size_t i = 0; i < pos_p.size(); ++i) pa_p[i] = pt(1 + pos_p[i]);
    for (std::size_t i = 0; i < pos_t.size(); ++i) pa_t[i] = pt(1 + pos_t[i]);
    double gap;
    try {
      gap = std::abs(p.score(pt(0), pa_p) - p_tilde.score(pt(0), pa_t));
    } catch (const NonDifferentiablePoint&) {
      ++tally.report.skipped;
      return;
    }
    tally.add(pt, gap);
  });
  return tally.finish();
}

BlockDensity independent_block(std::vector<Mechanism> marginals) {
  for (const Mechanism& m : marginals)
    if (!m.parents().empty()) throw ConfigError("independent_block: mechanisms must be parentless");
  BlockDensity b;
  b.dim = static_cast<int>(marginals.size());
  auto shared = std::make_shared<const std::vector<Mechanism>>(std::move(marginals));
  b.log_prob = [shared](const Vector& z) {
    double total = 0.0;
    for (std::size_t i = 0; i < shared->size(); ++i) total += (*shared)[i].log_prob(z(i), {});
    return total;
  };
  b.score = [shared](const Vector& z) {
    Vector s(z.size());
    for (std::size_t i = 0; i < shared->size(); ++i) s(i) = (*shared)[i].score(z(i), {});
    return s;
  };
  return b;
}

BlockDensity gaussian_block(const Vector& mean, const Matrix& cov) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) throw ConfigError("gaussian_block: shape mismatch");
  const Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw ConfigError("gaussian_block: covariance not positive definite");
  const Matrix precision = llt.solve(Matrix::Identity(mean.size(), mean.size()));
  const Vector chol_diag = Matrix(llt.matrixL()).diagonal();
  const double log_norm = -0.5 * static_cast<double>(mean.size()) * kLog2Pi - chol_diag.array().log().sum();
  BlockDensity b;
  b.dim = static_cast<int>(mean.size());
  b.log_prob = [=](const Vector& z) {
    const Vector u = z - mean;
    return log_norm - 0.5 * u.dot(precision * u);
  };
  b.score = [=](const Vector& z) { return Vector(-(precision * (z - mean))); };
  return b;
}

Matrix block_discrepancy_matrix(const std::vector<BlockDensity>& regimes, const Vector& z) {
  const Index n = static_cast<Index>(regimes.size()) - 1;
  const Vector s0 = regimes[0].score(z);
  Matrix m(n, z.size());
  for (Index s = 1; s <= n; ++s) m.row(s - 1) = (regimes[s].score(z) - s0).transpose();
  return m;
}

DiscrepancyReport check_block_discrepancy(const std::vector<BlockDensity>& regimes, const GridSpec& grid, double tol,
                                          double threshold) {
  if (regimes.size() < 2) throw ConfigError("block discrepancy: need q^0 and at least one intervention");
  const int n = regimes[0].dim;
  for (const auto& q : regimes)
    if (q.dim != n) throw ConfigError("block discrepancy: block dimensions differ");
  if (static_cast<int>(regimes.size()) != n + 1)
    throw ConfigError("block discrepancy: block of size " + std::to_string(n) + " needs " + std::to_string(n + 1) +
                      " regimes, got " + std::to_string(regimes.size()));
  Tally tally(grid, n, tol, threshold);
  for_each_grid_point(grid, n, tally.report.points_per_axis, [&](const Vector& z) {
    Matrix m;
    try {
      m = block_discrepancy_matrix(regimes, z);
    } catch (const NonDifferentiablePoint&) {
      ++tally.report.skipped;
      return;
    }
    tally.add(z, std::abs(m.partialPivLu().determinant()));
  });
  return tally.finish();
}

Matrix variability_matrix(const std::vector<std::vector<Mechanism>>& regimes, const Vector& z) {
  const Index n = z.size();
  auto w = [&](const std::vector<Mechanism>& q) {
    Vector out(2 * n);
    for (Index i = 0; i < n; ++i) {
      out(i) = q[i].score_derivative(z(i), {});
      out(n + i) = q[i].score(z(i), {});
    }
    return out;
  };
  const Vector w0 = w(regimes[0]);
  Matrix m(2 * n, 2 * n);
  for (Index s = 1; s <= 2 * n; ++s) m.row(s - 1) = (w(regimes[s]) - w0).transpose();
  return m;
}

DiscrepancyReport check_variability(const std::vector<std::vector<Mechanism>>& regimes, const GridSpec& grid,
                                    double tol, double threshold) {
  if (regimes.empty()) throw ConfigError("variability: no regimes");
  const int n = static_cast<int>(regimes[0].size());
  if (n < 1) throw ConfigError("variability: empty block");
  if (static_cast<int>(regimes.size()) != 2 * n + 1)
    throw ConfigError("variability: block of size " + std::to_string(n) + " needs " + std::to_string(2 * n + 1) +
                      " regimes");
  for (const auto& q : regimes) {
    if (static_cast<int>(q.size()) != n) throw ConfigError("variability: block dimensions differ");
    for (const Mechanism& m : q)
      if (!m.parents().empty()) throw ConfigError("variability: marginals must be parentless");
  }
  Tally tally(grid, n, tol, threshold);
  for_each_grid_point(grid, n, tally.report.points_per_axis, [&](const Vector& z) {
    const Matrix m = variability_matrix(regimes, z);
    const Eigen::JacobiSVD<Matrix> svd(m);
    tally.add(z, svd.singularValues().minCoeff());
  });
  return tally.finish();
}

Matrix abs_correlation_matrix(const Matrix& a, const Matrix& b, Correlation corr) {
  if (a.rows() != b.rows()) throw ConfigError("correlation: row counts differ");
  if (a.rows() < 3) throw ConfigError("correlation: need at least 3 rows");
  auto prepare = [&](const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index c = 0; c < m.cols(); ++c) {
      const Vector col = corr == Correlation::kSpearman ? ranks(m.col(c)) : Vector(m.col(c));
      out.col(c) = pearson_ready(col);
    }
    return out;
  };
  const Matrix pa = prepare(a), pb = prepare(b);
  return (pa.transpose() * pb).cwiseAbs().cwiseMin(1.0);
}

std::vector<int> max_weight_assignment(const Matrix& w) {
  const int n = static_cast<int>(w.rows()), m = static_cast<int>(w.cols());
  if (n > m) throw ConfigError("assignment: more rows than columns");
  // Shortest augmenting path on costs −w (1-based potentials).
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = -w(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) assign[p[j] - 1] = j - 1;
  return assign;
}

double mcc(const Matrix& z_true, const Matrix& z_learned, McMode mode, Correlation corr) {
  if (z_true.cols() != z_learned.cols()) throw ConfigError("mcc: column counts differ");
  const Matrix c = abs_correlation_matrix(z_true, z_learned, corr);
  if (mode == McMode::kIdentity) return c.diagonal().mean();
  const std::vector<int> assign = max_weight_assignment(c);
  double total = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i) total += c(static_cast<Index>(i), assign[i]);
  return total / static_cast<double>(assign.size());
}

LogProbFn model_log_prob(const EncoderModel& model) {
  const EncoderModel* m = &model;
  return [m](const Matrix& x, std::span<const int> regimes) { return m->log_prob(x, regimes); };
}

LogProbFn truth_log_prob(const LatentCbn& cbn, const MixingFunction& f) {
  return [cbn, f](const Matrix& x, std::span<const int> regimes) {
    if (static_cast<Index>(regimes.size()) != x.rows()) throw ConfigError("one regime label per row");
    Vector out(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
      const Vector z = f.inverse(Vector(x.row(r).transpose()));
      out(r) = log_density(cbn, regimes[r], z) - f.log_abs_det_jacobian(z);
    }
    return out;
  };
}

LogProbFn scaled_truth_log_prob(const LatentCbn& cbn, const MixingFunction& f, const ElementwiseMap& h) {
  const LatentCbn q = push_through_scaling(cbn, h);
  return [q, f, h](const Matrix& x, std::span<const int> regimes) {
    if (static_cast<Index>(regimes.size()) != x.rows()) throw ConfigError("one regime label per row");
    Vector out(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
      const Vector z = f.inverse(Vector(x.row(r).transpose()));
      out(r) = log_density(q, regimes[r], h.apply(z)) + h.log_abs_det(z) - f.log_abs_det_jacobian(z);
    }
    return out;
  };
}

DeltaLogProb delta_log_prob(const LogProbFn& model, const LogProbFn& truth, const std::vector<RegimeDataset>& heldout) {
  std::vector<double> diffs;
  for (const auto& ds : heldout) {
    const std::vector<int> labels(ds.size(), ds.regime);
    const Vector d = model(ds.x, labels) - truth(ds.x, labels);
    diffs.insert(diffs.end(), d.data(), d.data() + d.size());
  }
  if (diffs.empty()) throw ConfigError("delta_log_prob: no held-out points");
  // Plain loops: a vectorized reduction over std::vector storage depends on its alignment.
  const double n = static_cast<double>(diffs.size());
  DeltaLogProb out;
  out.points = static_cast<Index>(diffs.size());
  double sum = 0.0;
  for (double x : diffs) sum += x;
  out.mean = sum / n;
  if (diffs.size() > 1) {
    double ss = 0.0;
    for (double x : diffs) ss += (x - out.mean) * (x - out.mean);
    out.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

std::string to_string(AmbiguityKind k) {
  switch (k) {
    case AmbiguityKind::kScaling: return "scaling";
    case AmbiguityKind::kAncestral: return "ancestral";
    case AmbiguityKind::kBlock: return "block";
    default: return "none";
  }
}

void to_json(nlohmann::json& j, const AmbiguityClass& a) {
  std::vector<std::vector<double>> rel;
  for (Index r = 0; r < a.max_relative.rows(); ++r) {
    rel.emplace_back();
    for (Index c = 0; c < a.max_relative.cols(); ++c) rel.back().push_back(a.max_relative(r, c));
  }
  j = {{"classification", to_string(a.kind)},
       {"scaling", a.scaling},
       {"ancestral", a.ancestral},
       {"block", a.block},
       {"points", a.points},
       {"flagged", a.flagged},
       {"max_relative_jacobian", rel},
       {"max_abs_offdiagonal", a.max_abs_offdiagonal},
       {"max_relative_off_ancestral", a.max_relative_off_ancestral}};
}

AmbiguityClass classify_map(const std::function<Vector(const Vector&)>& phi, const Dag& g, const Matrix& points,
                            double tol, const std::vector<std::set<int>>& blocks, double step) {
  const int d = g.size();
  if (points.cols() != d) throw ConfigError("classify: point dimension does not match the graph");
  std::vector<int> block_of(d, -1);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (int i : blocks[b]) {
      if (i < 0 || i >= d || block_of[i] != -1) throw ConfigError("classify: blocks must partition the nodes");
      block_of[i] = static_cast<int>(b);
    }
  if (!blocks.empty() && std::count(block_of.begin(), block_of.end(), -1) > 0)
    throw ConfigError("classify: blocks must partition the nodes");

  AmbiguityClass out;
  out.max_relative = Matrix::Zero(d, d);
  Matrix jac(d, d);
  for (Index r = 0; r < points.rows(); ++r) {
    const Vector z = points.row(r).transpose();
    for (int c = 0; c < d; ++c) {
      Vector zp = z, zm = z;
      zp(c) += step;
      zm(c) -= step;
      jac.col(c) = (phi(zp) - phi(zm)) / (2.0 * step);
    }
    const double scale = jac.cwiseAbs().maxCoeff();
    if (!jac.allFinite() || !(scale > 0.0) ||
        std::abs(jac.partialPivLu().determinant()) < 1e-12 * std::pow(scale, d)) {
      ++out.flagged;
      continue;
    }
    ++out.points;
    for (int i = 0; i < d; ++i) {
      const double row_max = jac.row(i).cwiseAbs().maxCoeff();
      for (int j = 0; j < d; ++j) {
        const double rel = row_max > 0.0 ? std::abs(jac(i, j)) / row_max : 0.0;
        out.max_relative(i, j) = std::max(out.max_relative(i, j), rel);
        if (i != j) out.max_abs_offdiagonal = std::max(out.max_abs_offdiagonal, std::abs(jac(i, j)));
      }
    }
  }
  if (out.points == 0) throw NumericError("classify: every point has a singular Jacobian");

  out.scaling = out.ancestral = true;
  out.block = !blocks.empty();
  for (int i = 0; i < d; ++i) {
    const std::set<int> anc = g.ancestors_closure(i);
    for (int j = 0; j < d; ++j) {
      const bool nonzero = out.max_relative(i, j) >= tol;
      if (i != j && nonzero) out.scaling = false;
      if (!anc.count(j)) {
        out.max_relative_off_ancestral = std::max(out.max_relative_off_ancestral, out.max_relative(i, j));
        if (nonzero) out.ancestral = false;
      }
      if (!blocks.empty() && block_of[i] != block_of[j] && nonzero) out.block = false;
    }
  }
  if (out.scaling) out.kind = AmbiguityKind::kScaling;
  else if (out.ancestral) out.kind = AmbiguityKind::kAncestral;
  else if (out.block) out.kind = AmbiguityKind::kBlock;
  else out.kind = AmbiguityKind::kNone;
  return out;
}

AmbiguityClass classify_ambiguity(const std::function<Vector(const Vector&)>& encoder, const MixingFunction& f,
                                  const Dag& g, const Matrix& points, double tol,
                                  const std::vector<std::set<int>>& blocks) {
  return classify_map([&](const Vector& z) { return encoder(f.forward(z)); }, g, points, tol, blocks);
}

}  // namespace cauca
