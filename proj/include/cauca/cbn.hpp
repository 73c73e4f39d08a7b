#pragma once

#include "cauca/core.hpp"
#include "cauca/graph.hpp"
#include "cauca/mechanism.hpp"

#include "json.hpp"

#include <map>
#include <vector>

namespace cauca {

enum class InterventionKind { kPerfect, kImperfect };

struct InterventionSpec {
  std::vector<int> targets;                 // sorted
  std::map<int, Mechanism> replacements;    // node → replacement mechanism
  InterventionKind kind = InterventionKind::kPerfect;
};

/// Causal Bayesian network over latent variables: graph, one mechanism per
/// node and a list of interventional regimes k = 1..K (k = 0 is
/// observational). Immutable after construction; the add_* functions return
/// extended copies.
class LatentCbn {
 public:
  LatentCbn(Dag graph, std::vector<Mechanism> mechanisms,
            std::vector<InterventionSpec> interventions = {});

  const Dag& graph() const { return graph_; }
  int dim() const { return graph_.size(); }
  /// Number of interventional regimes K.
  int num_interventions() const { return static_cast<int>(interventions_.size()); }
  int num_regimes() const { return num_interventions() + 1; }
  const std::vector<Mechanism>& mechanisms() const { return mechanisms_; }
  const std::vector<InterventionSpec>& interventions() const { return interventions_; }
  const InterventionSpec& intervention(int k) const;
  /// Targets of regime k (empty for k = 0).
  std::vector<int> targets(int k) const;

  /// Mechanism in effect for `node` under regime k.
  const Mechanism& regime_mechanism(int k, int node) const;

  LatentCbn with_intervention(InterventionSpec spec) const;

 private:
  void check_regime(int k) const;

  Dag graph_;
  std::vector<Mechanism> mechanisms_;
  std::vector<InterventionSpec> interventions_;
};

/// Z_i := Σ α_ij Z_j + ε_i, α_ij ~ Uniform(−a, a), ε_i ~ N(0, 1).
LatentCbn make_linear_gaussian_scm(const Dag& g, double snr, Rng& rng);

/// Z_i := loc(Z_pa) + scale(Z_pa)·ε_i with random 3-layer nets.
LatentCbn make_location_scale_scm(const Dag& g, Rng& rng, int width = 16,
                                  Activation act = Activation::kLeakyTanh);

LatentCbn add_perfect_intervention(const LatentCbn& cbn, int target, const Mechanism& mech);
/// Perfect intervention N(μ, noise_std) with μ drawn uniformly from {+2, −2}.
LatentCbn add_perfect_intervention(const LatentCbn& cbn, int target, Rng& rng,
                                   double noise_std = 1.0);
LatentCbn add_imperfect_intervention(const LatentCbn& cbn, int target, const Mechanism& mech);
/// One perfect N(±2, noise_std) intervention per node, in node order (regime k targets node k-1).
LatentCbn add_per_node_perfect_interventions(const LatentCbn& cbn, Rng& rng,
                                             double noise_std = 1.0);

/// Ancestral sampling of n points from regime k (n × d).
Matrix sample(const LatentCbn& cbn, int k, Index n, Rng& rng);

double log_density(const LatentCbn& cbn, int k, const Vector& z);
/// Row-wise log densities of an n × d batch.
Vector log_density_batch(const LatentCbn& cbn, int k, const Matrix& z);

/// Gradient of log_density with respect to z.
Vector score(const LatentCbn& cbn, int k, const Vector& z);

/// The CBN Q of the element-wise reparametrization h: every mechanism
/// (observational and intervened) is pushed through h, so that
/// log q^k(h(z)) + log|det Dh(z)| = log p^k(z).
LatentCbn push_through_scaling(const LatentCbn& cbn, const ElementwiseMap& h);

/// (I − A)^{-1}(I − A)^{-T} for a linear-Gaussian CBN with unit noise, A_ij = α_ij.
Matrix linear_gaussian_covariance(const LatentCbn& cbn, int k = 0);

void to_json(nlohmann::json& j, const LatentCbn& cbn);
LatentCbn cbn_from_json(const nlohmann::json& j);

}  // namespace cauca
