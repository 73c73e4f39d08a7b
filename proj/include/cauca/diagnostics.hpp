#pragma once

#include "cauca/cbn.hpp"
#include "cauca/core.hpp"
#include "cauca/dataset.hpp"
#include "cauca/flows.hpp"
#include "cauca/graph.hpp"
#include "cauca/mechanism.hpp"
#include "cauca/mixing.hpp"

#include "json.hpp"

#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace cauca {

enum class Verdict { kSatisfied, kViolated, kInconclusive };
std::string to_string(Verdict v);

/// Tensor grid [lo, hi]^dim. When points_per_axis^dim exceeds max_points the
/// per-axis count is lowered to the largest odd value that fits.
struct GridSpec {
  double lo = -4.0;
  double hi = 4.0;
  int points_per_axis = 201;
  Index max_points = 2'000'000;
};

/// Points per axis actually used for a grid of the given dimension.
int effective_points_per_axis(const GridSpec& grid, int dim);

struct DiscrepancyReport {
  std::string grid;           // human-readable description
  int dim = 0;
  int points_per_axis = 0;
  Index total_points = 0;
  Index evaluated = 0;
  Index skipped = 0;          // score undefined (non-differentiable points)
  Index satisfied_points = 0;
  double fraction_satisfied = 0.0;
  double tol = 1e-8;
  double threshold = 0.999;
  /// Pairwise check: min / max |score gap|. Block checks: min / median |det M|.
  double min_value = 0.0;
  double median_value = 0.0;
  double max_value = 0.0;
  /// Bounding box of the violating points (empty when none).
  std::vector<double> violation_lo, violation_hi;
  Verdict verdict = Verdict::kInconclusive;
};

void to_json(nlohmann::json& j, const DiscrepancyReport& r);

/// Interventional discrepancy between p(z | z_pa) and p̃(z | z_pa'): the
/// grid spans z and the union of both parent lists (p̃'s parents are matched
/// to p's by node id). A point satisfies the check when
/// |∂_z ln p − ∂_z ln p̃| > tol.
DiscrepancyReport check_interventional_discrepancy(const Mechanism& p, const Mechanism& p_tilde,
                                                   const GridSpec& grid = {}, double tol = 1e-8,
                                                   double threshold = 0.999);

/// A joint density over a block of n variables with analytic score.
struct BlockDensity {
  int dim = 0;
  std::function<double(const Vector&)> log_prob;
  std::function<Vector(const Vector&)> score;
};

/// Product of parentless mechanisms, one per block coordinate.
BlockDensity independent_block(std::vector<Mechanism> marginals);
/// N(mean, cov).
BlockDensity gaussian_block(const Vector& mean, const Matrix& cov);

/// Block-interventional discrepancy: M(z) has rows ∂_z(ln q^s − ln q^0),
/// s = 1..n; a point satisfies the check when |det M(z)| > tol.
DiscrepancyReport check_block_discrepancy(const std::vector<BlockDensity>& regimes, const GridSpec& grid = {},
                                          double tol = 1e-8, double threshold = 0.999);

/// The matrix M(z) used by check_block_discrepancy.
Matrix block_discrepancy_matrix(const std::vector<BlockDensity>& regimes, const Vector& z);

/// Variability with 2n interventions on an n-block of independent
/// coordinates: rows w(z, s) − w(z, 0) with w = (∂² ln q_i, ∂ ln q_i)_i.
/// Reports the minimum singular value; a point satisfies the check when it
/// exceeds tol. `regimes[s][i]` is the parentless mechanism of coordinate i in regime s.
DiscrepancyReport check_variability(const std::vector<std::vector<Mechanism>>& regimes, const GridSpec& grid = {},
                                    double tol = 1e-8, double threshold = 0.999);

Matrix variability_matrix(const std::vector<std::vector<Mechanism>>& regimes, const Vector& z);

enum class McMode { kIdentity, kPermutation };
enum class Correlation { kPearson, kSpearman };

/// |corr| matrix between columns of a (rows) and b (columns).
Matrix abs_correlation_matrix(const Matrix& a, const Matrix& b, Correlation corr);
/// Mean correlation coefficient in [0, 1].
double mcc(const Matrix& z_true, const Matrix& z_learned, McMode mode = McMode::kPermutation,
           Correlation corr = Correlation::kSpearman);
/// Column assignment maximizing Σ_i w(i, assign[i]) (Hungarian algorithm).
std::vector<int> max_weight_assignment(const Matrix& w);

/// Row-wise log p^k(x) for a regime-indexed density over observations.
using LogProbFn = std::function<Vector(const Matrix& x, std::span<const int> regimes)>;

LogProbFn model_log_prob(const EncoderModel& model);
/// Exact log p^k(x) = log p^k_Z(f⁻¹(x)) − log|det Jf(f⁻¹(x))|.
LogProbFn truth_log_prob(const LatentCbn& cbn, const MixingFunction& f);
/// The same density written through an element-wise reparametrization h:
/// encoder h∘f⁻¹ and the mechanisms of `cbn` pushed through h.
LogProbFn scaled_truth_log_prob(const LatentCbn& cbn, const MixingFunction& f, const ElementwiseMap& h);

struct DeltaLogProb {
  double mean = 0.0;
  double std_error = 0.0;
  Index points = 0;
};

/// Mean over held-out points of model − truth log-probability.
DeltaLogProb delta_log_prob(const LogProbFn& model, const LogProbFn& truth, const std::vector<RegimeDataset>& heldout);

enum class AmbiguityKind { kScaling, kAncestral, kBlock, kNone };
std::string to_string(AmbiguityKind k);

struct AmbiguityClass {
  AmbiguityKind kind = AmbiguityKind::kNone;
  bool scaling = false;    // diagonal pattern at every point
  bool ancestral = false;  // row i supported on ānc(i)
  bool block = false;      // row i supported on its block (only when blocks are given)
  Index points = 0;
  Index flagged = 0;       // singular Jacobians, excluded
  /// max over points of |J_ij| / max_j |J_ij|.
  Matrix max_relative;
  /// max over points of |J_ij| for i ≠ j.
  double max_abs_offdiagonal = 0.0;
  double max_relative_off_ancestral = 0.0;
};

void to_json(nlohmann::json& j, const AmbiguityClass& a);

/// Classifies φ from its central-difference Jacobian (step `step`) at the
/// points (rows). An entry counts as zero when |J_ij| < tol · max_j |J_ij|.
AmbiguityClass classify_map(const std::function<Vector(const Vector&)>& phi, const Dag& g, const Matrix& points,
                            double tol = 1e-2, const std::vector<std::set<int>>& blocks = {}, double step = 1e-5);

/// φ = encoder ∘ f evaluated at latent points.
AmbiguityClass classify_ambiguity(const std::function<Vector(const Vector&)>& encoder, const MixingFunction& f,
                                  const Dag& g, const Matrix& points, double tol = 1e-2,
                                  const std::vector<std::set<int>>& blocks = {});

}  // namespace cauca
