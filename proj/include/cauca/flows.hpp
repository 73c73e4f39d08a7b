#pragma once

#include "cauca/core.hpp"
#include "cauca/graph.hpp"
#include "cauca/spline.hpp"

#include "json.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cauca {

/// Intermediate values a layer keeps from forward() for its backward().
struct LayerCache {
  Matrix input;
  std::vector<Matrix> mats;
  std::vector<RowMatrix> row_mats;
};

/// One invertible layer of the encoder. Parameters live in a flat vector
/// owned by the layer. Batches are n × d, one sample per row.
class FlowLayer {
 public:
  virtual ~FlowLayer() = default;

  virtual std::string kind() const = 0;
  virtual int dim() const = 0;
  virtual std::unique_ptr<FlowLayer> clone() const = 0;

  Index num_params() const { return params_.size(); }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  /// z = layer(x); adds the per-row log|det J| to `logdet`.
  virtual void forward(const Matrix& x, Matrix& z, Vector& logdet, LayerCache* cache) const = 0;
  /// Given ∂L/∂z and ∂L/∂logdet (per row), writes ∂L/∂x and adds ∂L/∂params to `gparams`.
  virtual void backward(const LayerCache& cache, const Matrix& gz, const Vector& glogdet,
                        Matrix& gx, Eigen::Ref<Vector> gparams) const = 0;
  virtual Matrix inverse(const Matrix& z) const = 0;

  /// Hyperparameters (not the parameter values).
  virtual nlohmann::json spec() const = 0;

 protected:
  Vector params_;
};

/// z = L U x + b with L unit lower triangular, U upper triangular with
/// diagonal exp(s). log|det| = Σ s.
class LuLinear final : public FlowLayer {
 public:
  explicit LuLinear(int d);

  std::string kind() const override { return "lu-linear"; }
  int dim() const override { return d_; }
  std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<LuLinear>(*this); }

  Matrix weight() const;
  Vector bias() const { return params_.tail(d_); }
  /// Sets L, U factors so that the layer matrix equals diag-positive-U form of `w`;
  /// used in tests. Throws if `w` has a non-positive leading principal minor.
  void set_weight(const Matrix& w, const Vector& b);

  void forward(const Matrix& x, Matrix& z, Vector& logdet, LayerCache* cache) const override;
  void backward(const LayerCache& cache, const Matrix& gz, const Vector& glogdet, Matrix& gx,
                Eigen::Ref<Vector> gparams) const override;
  Matrix inverse(const Matrix& z) const override;
  nlohmann::json spec() const override { return {{"kind", kind()}, {"d", d_}}; }

 private:
  Matrix lower() const;
  Matrix upper() const;

  int d_;
  Index n_tri_;  // d(d-1)/2
};

/// Fixed coordinate permutation: z_i = x_{perm[i]}.
class Permutation final : public FlowLayer {
 public:
  explicit Permutation(std::vector<int> perm);
  static Permutation reverse(int d);

  std::string kind() const override { return "permutation"; }
  int dim() const override { return static_cast<int>(perm_.size()); }
  std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<Permutation>(*this); }
  const std::vector<int>& perm() const { return perm_; }

  void forward(const Matrix& x, Matrix& z, Vector& logdet, LayerCache* cache) const override;
  void backward(const LayerCache& cache, const Matrix& gz, const Vector& glogdet, Matrix& gx,
                Eigen::Ref<Vector> gparams) const override;
  Matrix inverse(const Matrix& z) const override;
  nlohmann::json spec() const override { return {{"kind", kind()}, {"perm", perm_}}; }

 private:
  std::vector<int> perm_;
};

/// Half-mask coupling: the first ⌊d/2⌋ coordinates pass through and condition
/// a 3-layer tanh network whose outputs drive element-wise rational-quadratic
/// splines on the remaining coordinates. Freshly constructed layers are the
/// identity (zero output layer).
class SplineCoupling final : public FlowLayer {
 public:
  SplineCoupling(int d, int hidden, SplineConfig spline, Rng& rng);
  /// Unininitialized parameters (all zero); used when loading checkpoints.
  SplineCoupling(int d, int hidden, SplineConfig spline);

  std::string kind() const override { return "spline-coupling"; }
  int dim() const override { return d_; }
  std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<SplineCoupling>(*this); }

  void forward(const Matrix& x, Matrix& z, Vector& logdet, LayerCache* cache) const override;
  void backward(const LayerCache& cache, const Matrix& gz, const Vector& glogdet, Matrix& gx,
                Eigen::Ref<Vector> gparams) const override;
  Matrix inverse(const Matrix& z) const override;
  nlohmann::json spec() const override;

 private:
  struct Offsets {
    Index w1, b1, w2, b2, w3, b3;
  };
  void conditioner(const Matrix& xc, RowMatrix& h1, RowMatrix& h2, RowMatrix& out) const;

  int d_, n_id_, n_tr_, hidden_;
  SplineConfig spline_;
  Offsets off_;
};

// ---------------------------------------------------------------------------
// Base densities (one per regime) over the encoder output z.

class BaseDensity {
 public:
  virtual ~BaseDensity() = default;
  virtual std::string kind() const = 0;
  virtual std::unique_ptr<BaseDensity> clone() const = 0;
  virtual int dim() const = 0;
  /// Number of interventional regimes K the base distinguishes.
  virtual int num_interventions() const = 0;
  /// Whether every regime label is evaluated with the regime-0 density.
  virtual bool pooled() const { return false; }

  Index num_params() const { return params_.size(); }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  std::vector<char>& frozen() { return frozen_; }
  const std::vector<char>& frozen() const { return frozen_; }

  virtual Vector log_prob(const Matrix& z, std::span<const int> regimes) const = 0;
  /// For L = Σ_r weight_r · log p(z_r): adds ∂L/∂z to `gz` and ∂L/∂params to `gparams`.
  virtual void backward(const Matrix& z, std::span<const int> regimes, const Vector& weight,
                        Matrix& gz, Eigen::Ref<Vector> gparams) const = 0;
  virtual nlohmann::json spec() const = 0;

 protected:
  void check_regimes(std::span<const int> regimes, Index rows) const;

  Vector params_;
  std::vector<char> frozen_;
};

/// Linear-Gaussian CBN base: p̂^k(z_i | z_pa) = N(Σ α̂_ij z_j, σ̂_i) for i ∉ τ_k and
/// N(μ̂_i^k, σ̂_i^k) for i ∈ τ_k. Parameter layout: α̂ per edge (edge order),
/// log σ̂_i (d), then per regime k and target i: μ̂_i^k, log σ̂_i^k.
class GaussianCbnBase final : public BaseDensity {
 public:
  /// `targets[k-1]` lists the intervened nodes of regime k.
  GaussianCbnBase(Dag graph, std::vector<std::vector<int>> targets, bool pooled = false);

  std::string kind() const override { return "gaussian-cbn"; }
  std::unique_ptr<BaseDensity> clone() const override { return std::make_unique<GaussianCbnBase>(*this); }
  int dim() const override { return graph_.size(); }
  int num_interventions() const override { return static_cast<int>(targets_.size()); }
  bool pooled() const override { return pooled_; }
  const Dag& graph() const { return graph_; }
  const std::vector<std::vector<int>>& targets() const { return targets_; }

  Index alpha_index(int edge) const { return edge; }
  Index log_std_index(int node) const { return n_edges_ + node; }
  /// Index of μ̂ for (regime k ≥ 1, target node); log σ̂ follows at +1.
  Index intervention_index(int k, int node) const;

  double alpha(int from, int to) const;
  double std_dev(int node) const { return std::exp(params_(log_std_index(node))); }

  Vector log_prob(const Matrix& z, std::span<const int> regimes) const override;
  void backward(const Matrix& z, std::span<const int> regimes, const Vector& weight, Matrix& gz,
                Eigen::Ref<Vector> gparams) const override;
  nlohmann::json spec() const override;

 private:
  Dag graph_;
  std::vector<std::vector<int>> targets_;
  bool pooled_;
  Index n_edges_;
  std::vector<Index> regime_offset_;  // per regime k ≥ 1
  // parent_edges_[i] = list of (parent, edge index)
  std::vector<std::vector<std::pair<int, int>>> parent_edges_;
};

/// Nonparametric CBN base: u = h(z) with u_i = s_i(z_i; c_i(z_pa(i))) a
/// monotone spline stack conditioned on the graph parents only, so the
/// Jacobian is lower triangular in topological order. p(u) = N(0, I); in
/// regime k the intervened coordinates are fixed standard normal.
class CbnBaseFlow final : public BaseDensity {
 public:
  CbnBaseFlow(Dag graph, std::vector<std::vector<int>> targets, int hidden, int depth,
              SplineConfig spline, Rng& rng);
  CbnBaseFlow(Dag graph, std::vector<std::vector<int>> targets, int hidden, int depth,
              SplineConfig spline);

  std::string kind() const override { return "cbn-flow"; }
  std::unique_ptr<BaseDensity> clone() const override { return std::make_unique<CbnBaseFlow>(*this); }
  int dim() const override { return graph_.size(); }
  int num_interventions() const override { return static_cast<int>(targets_.size()); }
  const Dag& graph() const { return graph_; }

  /// u = h(z) for a single point.
  Vector transform(const Vector& z) const;

  Vector log_prob(const Matrix& z, std::span<const int> regimes) const override;
  void backward(const Matrix& z, std::span<const int> regimes, const Vector& weight, Matrix& gz,
                Eigen::Ref<Vector> gparams) const override;
  nlohmann::json spec() const override;

 private:
  struct NodeNet {
    Index offset;  // into params_
    int in;
    Index w1, b1, w2, b2, w3, b3;  // relative offsets
  };
  void init_layout();
  void node_forward(int i, const Matrix& z, RowMatrix& h1, RowMatrix& h2, RowMatrix& out) const;
  bool intervened(int k, int node) const;

  Dag graph_;
  std::vector<std::vector<int>> targets_;
  int hidden_, depth_;
  SplineConfig spline_;
  std::vector<NodeNet> nets_;
};

// ---------------------------------------------------------------------------

struct FlowConfig {
  int blocks = 6;
  int hidden = 64;
  SplineConfig spline{};
};

/// Encoder g_θ (a stack of flow layers) plus a regime-indexed base density.
/// Implements log p^k(x) = log|det Jg(x)| + log p̂^k(g(x)).
class EncoderModel {
 public:
  EncoderModel() = default;
  EncoderModel(std::vector<std::unique_ptr<FlowLayer>> layers, std::unique_ptr<BaseDensity> base);
  EncoderModel(const EncoderModel& other);
  EncoderModel& operator=(const EncoderModel& other);
  EncoderModel(EncoderModel&&) noexcept = default;
  EncoderModel& operator=(EncoderModel&&) noexcept = default;

  int dim() const;
  const std::vector<std::unique_ptr<FlowLayer>>& layers() const { return layers_; }
  FlowLayer& layer(std::size_t i) { return *layers_.at(i); }
  const BaseDensity& base() const { return *base_; }
  BaseDensity& base() { return *base_; }

  Index num_params() const;
  Vector get_params() const;
  void set_params(const Vector& theta);
  /// Model-wide mask (flow parameters are never frozen).
  std::vector<char> frozen_mask() const;

  /// z = g(x) and per-row log|det Jg(x)|.
  void encode(const Matrix& x, Matrix& z, Vector& logdet) const;
  Matrix encode(const Matrix& x) const;
  Matrix decode(const Matrix& z) const;
  /// Per-row log p^{k_r}(x_r).
  Vector log_prob(const Matrix& x, std::span<const int> regimes) const;

  /// J(θ) = (1/n) Σ_r weight_r log p^{k_r}(x_r); returns J and writes ∂J/∂θ
  /// (zero at frozen entries) to `grad`. Empty `weight` means all ones.
  double objective_and_gradient(const Matrix& x, std::span<const int> regimes, const Vector& weight,
                                Vector& grad) const;

 private:
  std::vector<std::unique_ptr<FlowLayer>> layers_;
  std::unique_ptr<BaseDensity> base_;
};

/// [LU-linear, spline coupling, reverse permutation] × cfg.blocks.
std::vector<std::unique_ptr<FlowLayer>> make_spline_flow(int d, const FlowConfig& cfg, Rng& rng);
/// A single LU-linear layer.
std::vector<std::unique_ptr<FlowLayer>> make_linear_flow(int d);

nlohmann::json model_to_json(const EncoderModel& model);
EncoderModel model_from_json(const nlohmann::json& j);

}  // namespace cauca
