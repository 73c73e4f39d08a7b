#include "cauca/cbn.hpp"

#include <algorithm>

namespace cauca {

LatentCbn::LatentCbn(Dag graph, std::vector<Mechanism> mechanisms,
                     std::vector<InterventionSpec> interventions)
    : graph_(std::move(graph)), mechanisms_(std::move(mechanisms)) {
  if (static_cast<int>(mechanisms_.size()) != graph_.size())
    throw ConfigError("LatentCbn: one mechanism per node required");
  for (int i = 0; i < graph_.size(); ++i)
    if (mechanisms_[i].parents() != graph_.parents(i))
      throw ConfigError("LatentCbn: mechanism parents of node " + std::to_string(i + 1) +
                        " do not match the graph");
  for (auto& spec : interventions) *this = with_intervention(std::move(spec));
}

void LatentCbn::check_regime(int k) const {
  if (k < 0 || k > num_interventions())
    throw ConfigError("regime " + std::to_string(k) + " out of range [0, " +
                      std::to_string(num_interventions()) + "]");
}

const InterventionSpec& LatentCbn::intervention(int k) const {
  check_regime(k);
  if (k == 0) throw ConfigError("regime 0 is observational");
  return interventions_[k - 1];
}

std::vector<int> LatentCbn::targets(int k) const {
  check_regime(k);
  return k == 0 ? std::vector<int>{} : interventions_[k - 1].targets;
}

const Mechanism& LatentCbn::regime_mechanism(int k, int node) const {
  check_regime(k);
  if (node < 0 || node >= dim()) throw ConfigError("node out of range");
  if (k > 0) {
    const auto& rep = interventions_[k - 1].replacements;
    if (auto it = rep.find(node); it != rep.end()) return it->second;
  }
  return mechanisms_[node];
}

LatentCbn LatentCbn::with_intervention(InterventionSpec spec) const {
  if (spec.replacements.empty()) throw InvalidIntervention("intervention without targets");
  spec.targets.clear();
  for (const auto& [node, mech] : spec.replacements) {
    if (node < 0 || node >= dim())
      throw InvalidIntervention("intervention target " + std::to_string(node + 1) + " out of range");
    const auto& pa = graph_.parents(node);
    for (int p : mech.parents())
      if (!std::binary_search(pa.begin(), pa.end(), p))
        throw InvalidIntervention("replacement for node " + std::to_string(node + 1) +
                                  " adds parent " + std::to_string(p + 1));
    if (spec.kind == InterventionKind::kPerfect && !mech.parents().empty())
      throw InvalidIntervention("perfect intervention must remove all parents");
    if (spec.kind == InterventionKind::kImperfect && mech.parents().empty())
      throw InvalidIntervention("imperfect intervention must keep at least one parent");
    spec.targets.push_back(node);
  }
  LatentCbn out = *this;
  out.interventions_.push_back(std::move(spec));
  return out;
}

LatentCbn make_linear_gaussian_scm(const Dag& g, double snr, Rng& rng) {
  if (!(snr > 0.0)) throw ConfigError("snr must be positive");
  std::uniform_real_distribution<double> coef(-snr, snr);
  std::vector<Mechanism> mechs;
  for (int i = 0; i < g.size(); ++i) {
    const auto& pa = g.parents(i);
    if (pa.empty()) {
      mechs.push_back(Mechanism::gaussian(0.0, 1.0));
      continue;
    }
    std::vector<double> w;
    for (std::size_t j = 0; j < pa.size(); ++j) w.push_back(coef(rng));
    mechs.push_back(Mechanism::linear_gaussian(pa, std::move(w), 1.0));
  }
  return LatentCbn(g, std::move(mechs));
}

LatentCbn make_location_scale_scm(const Dag& g, Rng& rng, int width, Activation act) {
  std::vector<Mechanism> mechs;
  for (int i = 0; i < g.size(); ++i) {
    const auto& pa = g.parents(i);
    const int n = static_cast<int>(pa.size());
    DenseNet loc = DenseNet::random(n, width, act, rng);
    DenseNet scale = DenseNet::random(n, width, act, rng);
    mechs.emplace_back(LocationScaleNet{std::move(loc), std::move(scale), 0.1}, pa);
  }
  return LatentCbn(g, std::move(mechs));
}

LatentCbn add_perfect_intervention(const LatentCbn& cbn, int target, const Mechanism& mech) {
  InterventionSpec spec;
  spec.kind = InterventionKind::kPerfect;
  spec.replacements.emplace(target, mech);
  return cbn.with_intervention(std::move(spec));
}

LatentCbn add_perfect_intervention(const LatentCbn& cbn, int target, Rng& rng, double noise_std) {
  const double mean = std::bernoulli_distribution(0.5)(rng) ? 2.0 : -2.0;
  return add_perfect_intervention(cbn, target, Mechanism::gaussian(mean, noise_std));
}

LatentCbn add_imperfect_intervention(const LatentCbn& cbn, int target, const Mechanism& mech) {
  InterventionSpec spec;
  spec.kind = InterventionKind::kImperfect;
  spec.replacements.emplace(target, mech);
  return cbn.with_intervention(std::move(spec));
}

LatentCbn add_per_node_perfect_interventions(const LatentCbn& cbn, Rng& rng, double noise_std) {
  LatentCbn out = cbn;
  for (int i = 0; i < cbn.dim(); ++i) out = add_perfect_intervention(out, i, rng, noise_std);
  return out;
}

namespace {

std::vector<double> gather(const Vector& z, const std::vector<int>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) out[j] = z(idx[j]);
  return out;
}

void check_point(const LatentCbn& cbn, const Vector& z) {
  if (z.size() != cbn.dim()) throw ConfigError("point dimension mismatch");
  if (!z.allFinite()) throw NumericError("non-finite latent point");
}

}  // namespace

Matrix sample(const LatentCbn& cbn, int k, Index n, Rng& rng) {
  const int d = cbn.dim();
  cbn.targets(k);  // range check
  Matrix z(n, d);
  Vector row(d);
  for (Index r = 0; r < n; ++r) {
    for (int i : cbn.graph().topological_order()) {
      const Mechanism& m = cbn.regime_mechanism(k, i);
      row(i) = m.sample(gather(row, m.parents()), rng);
    }
    z.row(r) = row.transpose();
  }
  return z;
}

double log_density(const LatentCbn& cbn, int k, const Vector& z) {
  check_point(cbn, z);
  double total = 0.0;
  for (int i = 0; i < cbn.dim(); ++i) {
    const Mechanism& m = cbn.regime_mechanism(k, i);
    total += m.log_prob(z(i), gather(z, m.parents()));
  }
  return total;
}

Vector log_density_batch(const LatentCbn& cbn, int k, const Matrix& z) {
  Vector out(z.rows());
  for (Index r = 0; r < z.rows(); ++r) out(r) = log_density(cbn, k, Vector(z.row(r).transpose()));
  return out;
}

Vector score(const LatentCbn& cbn, int k, const Vector& z) {
  check_point(cbn, z);
  Vector g = Vector::Zero(cbn.dim());
  for (int i = 0; i < cbn.dim(); ++i) {
    const Mechanism& m = cbn.regime_mechanism(k, i);
    const auto zpa = gather(z, m.parents());
    std::vector<double> gpa(zpa.size());
    g(i) += m.score_full(z(i), zpa, gpa);
    for (std::size_t j = 0; j < gpa.size(); ++j) g(m.parents()[j]) += gpa[j];
  }
  return g;
}

LatentCbn push_through_scaling(const LatentCbn& cbn, const ElementwiseMap& h) {
  if (h.size() != cbn.dim()) throw ConfigError("scaling map dimension mismatch");
  auto push = [&](const Mechanism& m, int node) {
    Pushed p;
    p.inner = std::make_shared<const Mechanism>(m);
    p.self = h.maps[node];
    for (int q : m.parents()) p.parents.push_back(h.maps[q]);
    return Mechanism(std::move(p), m.parents());
  };
  std::vector<Mechanism> mechs;
  for (int i = 0; i < cbn.dim(); ++i) mechs.push_back(push(cbn.mechanisms()[i], i));
  std::vector<InterventionSpec> specs;
  for (const auto& spec : cbn.interventions()) {
    InterventionSpec s;
    s.kind = spec.kind;
    for (const auto& [node, mech] : spec.replacements) s.replacements.emplace(node, push(mech, node));
    specs.push_back(std::move(s));
  }
  return LatentCbn(cbn.graph(), std::move(mechs), std::move(specs));
}

Matrix linear_gaussian_covariance(const LatentCbn& cbn, int k) {
  const int d = cbn.dim();
  Matrix a = Matrix::Zero(d, d);
  Vector var(d);
  for (int i = 0; i < d; ++i) {
    const Mechanism& m = cbn.regime_mechanism(k, i);
    if (const auto* lg = std::get_if<LinearGaussian>(&m.family())) {
      for (std::size_t j = 0; j < lg->weights.size(); ++j) a(i, m.parents()[j]) = lg->weights[j];
      var(i) = lg->std * lg->std;
    } else if (const auto* gm = std::get_if<GaussianMarginal>(&m.family())) {
      var(i) = gm->std * gm->std;
    } else {
      throw ConfigError("linear_gaussian_covariance: non-Gaussian mechanism");
    }
  }
  const Matrix inv = (Matrix::Identity(d, d) - a).inverse();
  return inv * var.asDiagonal() * inv.transpose();
}

void to_json(nlohmann::json& j, const LatentCbn& cbn) {
  nlohmann::json interventions = nlohmann::json::array();
  for (const auto& spec : cbn.interventions()) {
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& [node, mech] : spec.replacements)
      reps.push_back({{"node", node + 1}, {"mechanism", mech}});
    interventions.push_back(
        {{"kind", spec.kind == InterventionKind::kPerfect ? "perfect" : "imperfect"},
         {"replacements", reps}});
  }
  j = {{"graph", cbn.graph()}, {"mechanisms", cbn.mechanisms()}, {"interventions", interventions}};
}

LatentCbn cbn_from_json(const nlohmann::json& j) {
  Dag g = j.at("graph").get<Dag>();
  std::vector<Mechanism> mechs;
  for (const auto& m : j.at("mechanisms")) mechs.push_back(mechanism_from_json(m));
  std::vector<InterventionSpec> specs;
  for (const auto& s : j.value("interventions", nlohmann::json::array())) {
    InterventionSpec spec;
    const std::string kind = s.at("kind");
    if (kind == "perfect") spec.kind = InterventionKind::kPerfect;
    else if (kind == "imperfect") spec.kind = InterventionKind::kImperfect;
    else throw ConfigError("unknown intervention kind '" + kind + "'");
    for (const auto& r : s.at("replacements"))
      spec.replacements.emplace(r.at("node").get<int>() - 1, mechanism_from_json(r.at("mechanism")));
    specs.push_back(std::move(spec));
  }
  return LatentCbn(std::move(g), std::move(mechs), std::move(specs));
}

}  // namespace cauca
