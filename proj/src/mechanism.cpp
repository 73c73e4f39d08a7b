#include "cauca/mechanism.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <numbers>

namespace cauca {

// ---------------------------------------------------------------------------
// ScalarDiffeo / ElementwiseMap

double ScalarDiffeo::operator()(double z) const {
  return sign * (a * z + b * std::tanh(c * z)) + shift;
}

double ScalarDiffeo::deriv(double z) const {
  const double t = std::tanh(c * z);
  return sign * (a + b * c * (1.0 - t * t));
}

double ScalarDiffeo::second_deriv(double z) const {
  const double t = std::tanh(c * z);
  return sign * (-2.0 * b * c * c * t * (1.0 - t * t));
}

double ScalarDiffeo::inverse(double y) const {
  const double target = sign * (y - shift);
  // a z + b tanh(c z) = target, increasing; the root lies in [(t-b)/a, (t+b)/a].
  double lo = (target - b) / a;
  double hi = (target + b) / a;
  double z = target / a;
  for (int it = 0; it < 200; ++it) {
    const double t = std::tanh(c * z);
    const double g = a * z + b * t - target;
    if (g == 0.0) return z;
    if (g > 0.0) hi = z; else lo = z;
    const double dg = a + b * c * (1.0 - t * t);
    double next = z - g / dg;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - z) <= 1e-16 * std::max(1.0, std::abs(z))) return next;
    z = next;
  }
  return z;
}

Vector ElementwiseMap::apply(const Vector& z) const {
  Vector y(z.size());
  for (Index i = 0; i < z.size(); ++i) y(i) = maps[i](z(i));
  return y;
}

Vector ElementwiseMap::inverse(const Vector& y) const {
  Vector z(y.size());
  for (Index i = 0; i < y.size(); ++i) z(i) = maps[i].inverse(y(i));
  return z;
}

double ElementwiseMap::log_abs_det(const Vector& z) const {
  double s = 0.0;
  for (Index i = 0; i < z.size(); ++i) s += std::log(std::abs(maps[i].deriv(z(i))));
  return s;
}

ElementwiseMap ElementwiseMap::identity(int d) {
  return ElementwiseMap{std::vector<ScalarDiffeo>(d)};
}

ElementwiseMap ElementwiseMap::random(int d, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  ElementwiseMap m;
  for (int i = 0; i < d; ++i) {
    ScalarDiffeo h;
    h.a = 0.5 + 1.5 * u01(rng);
    h.b = 2.0 * u01(rng);
    h.c = 0.5 + 1.5 * u01(rng);
    h.shift = -1.0 + 2.0 * u01(rng);
    h.sign = u01(rng) < 0.5 ? -1 : 1;
    m.maps.push_back(h);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Plateau helpers

double Plateau::plateau_end() const {
  return 1.0 - 0.5 * (std::sqrt(std::numbers::pi / a) + std::sqrt(std::numbers::pi / b));
}

namespace {

void validate(const Mechanism::Family& f, std::size_t n_parents) {
  struct Visitor {
    std::size_t n;
    void operator()(const LinearGaussian& m) const {
      if (m.weights.size() != n) throw ConfigError("linear-gaussian: one weight per parent required");
      if (!(m.std > 0.0)) throw ConfigError("linear-gaussian: std must be positive");
    }
    void operator()(const GaussianMarginal& m) const {
      if (n != 0) throw ConfigError("gaussian-marginal: parent list must be empty");
      if (!(m.std > 0.0)) throw ConfigError("gaussian-marginal: std must be positive");
    }
    void operator()(const LocationScaleNet& m) const {
      if (static_cast<std::size_t>(m.loc.input_dim()) != n ||
          static_cast<std::size_t>(m.scale.input_dim()) != n)
        throw ConfigError("location-scale: net input size must equal parent count");
      if (!(m.floor > 0.0)) throw ConfigError("location-scale: floor must be positive");
    }
    void operator()(const Plateau& m) const {
      if (n != 0) throw ConfigError("plateau: parent list must be empty");
      if (!(m.a > std::numbers::pi) || !(m.b > std::numbers::pi))
        throw ConfigError("plateau: requires sqrt(pi/a) < 1 and sqrt(pi/b) < 1");
    }
    void operator()(const Pushed& m) const {
      if (!m.inner) throw ConfigError("pushed: missing inner mechanism");
      if (m.parents.size() != n) throw ConfigError("pushed: one parent map per parent required");
    }
  };
  std::visit(Visitor{n_parents}, f);
}

struct LocScale {
  double loc, scale, raw;
};

LocScale eval_loc_scale(const LocationScaleNet& m, std::span<const double> zpa) {
  const double raw = m.scale(zpa);
  return {m.loc(zpa), softplus(raw) + m.floor, raw};
}

}  // namespace

Mechanism::Mechanism(Family family, std::vector<int> parents)
    : family_(std::move(family)), parents_(std::move(parents)) {
  validate(family_, parents_.size());
}

Mechanism Mechanism::linear_gaussian(std::vector<int> parents, std::vector<double> weights,
                                     double std, double bias) {
  return Mechanism(LinearGaussian{std::move(weights), bias, std}, std::move(parents));
}

std::string Mechanism::family_name() const {
  struct Visitor {
    std::string operator()(const LinearGaussian&) const { return "linear-gaussian"; }
    std::string operator()(const GaussianMarginal&) const { return "gaussian-marginal"; }
    std::string operator()(const LocationScaleNet&) const { return "location-scale-net"; }
    std::string operator()(const Plateau&) const { return "plateau"; }
    std::string operator()(const Pushed&) const { return "pushed"; }
  };
  return std::visit(Visitor{}, family_);
}

double Mechanism::log_prob(double z, std::span<const double> zpa) const {
  if (zpa.size() != parents_.size()) throw ConfigError("mechanism: parent value count mismatch");
  struct Visitor {
    double z;
    std::span<const double> zpa;
    double operator()(const LinearGaussian& m) const {
      double mean = m.bias;
      for (std::size_t j = 0; j < zpa.size(); ++j) mean += m.weights[j] * zpa[j];
      return normal_log_pdf(z, mean, m.std);
    }
    double operator()(const GaussianMarginal& m) const { return normal_log_pdf(z, m.mean, m.std); }
    double operator()(const LocationScaleNet& m) const {
      const LocScale ls = eval_loc_scale(m, zpa);
      return normal_log_pdf(z, ls.loc, ls.scale);
    }
    double operator()(const Plateau& m) const {
      if (z < 0.0) return -m.a * z * z;
      const double end = m.plateau_end();
      if (z <= end) return 0.0;
      const double u = z - end;
      return -m.b * u * u;
    }
    double operator()(const Pushed& m) const {
      const double inner_z = m.self.inverse(z);
      std::vector<double> inner_pa(zpa.size());
      for (std::size_t j = 0; j < zpa.size(); ++j) inner_pa[j] = m.parents[j].inverse(zpa[j]);
      return m.inner->log_prob(inner_z, inner_pa) - std::log(std::abs(m.self.deriv(inner_z)));
    }
  };
  return std::visit(Visitor{z, zpa}, family_);
}

double Mechanism::score(double z, std::span<const double> zpa) const {
  std::vector<double> gpa(zpa.size());
  return score_full(z, zpa, gpa);
}

double Mechanism::score_full(double z, std::span<const double> zpa, std::span<double> gpa) const {
  if (zpa.size() != parents_.size() || gpa.size() != parents_.size())
    throw ConfigError("mechanism: parent value count mismatch");
  struct Visitor {
    double z;
    std::span<const double> zpa;
    std::span<double> gpa;
    double operator()(const LinearGaussian& m) const {
      double mean = m.bias;
      for (std::size_t j = 0; j < zpa.size(); ++j) mean += m.weights[j] * zpa[j];
      const double r = (z - mean) / (m.std * m.std);
      for (std::size_t j = 0; j < zpa.size(); ++j) gpa[j] = r * m.weights[j];
      return -r;
    }
    double operator()(const GaussianMarginal& m) const { return -(z - m.mean) / (m.std * m.std); }
    double operator()(const LocationScaleNet& m) const {
      const std::size_t n = zpa.size();
      std::vector<double> gloc(n), gscale(n);
      const double loc = m.loc.value_and_grad(zpa, gloc);
      const double raw = m.scale.value_and_grad(zpa, gscale);
      const double s = softplus(raw) + m.floor;
      const double u = z - loc;
      const double d_loc = u / (s * s);
      const double d_scale = -1.0 / s + u * u / (s * s * s);
      const double d_raw = d_scale * sigmoid(raw);
      for (std::size_t j = 0; j < n; ++j) gpa[j] = d_loc * gloc[j] + d_raw * gscale[j];
      return -d_loc;
    }
    double operator()(const Plateau& m) const {
      const double end = m.plateau_end();
      if (z == 0.0 || z == end)
        throw NonDifferentiablePoint("plateau: score undefined at a breakpoint");
      if (z < 0.0) return -2.0 * m.a * z;
      if (z < end) return 0.0;
      return -2.0 * m.b * (z - end);
    }
    double operator()(const Pushed& m) const {
      const double inner_z = m.self.inverse(z);
      const std::size_t n = zpa.size();
      std::vector<double> inner_pa(n), inner_g(n);
      for (std::size_t j = 0; j < n; ++j) inner_pa[j] = m.parents[j].inverse(zpa[j]);
      const double s_inner = m.inner->score_full(inner_z, inner_pa, inner_g);
      const double h1 = m.self.deriv(inner_z);
      const double h2 = m.self.second_deriv(inner_z);
      for (std::size_t j = 0; j < n; ++j) gpa[j] = inner_g[j] / m.parents[j].deriv(inner_pa[j]);
      return (s_inner - h2 / h1) / h1;
    }
  };
  return std::visit(Visitor{z, zpa, gpa}, family_);
}

double Mechanism::score_derivative(double z, std::span<const double> zpa) const {
  if (zpa.size() != parents_.size()) throw ConfigError("mechanism: parent value count mismatch");
  struct Visitor {
    std::span<const double> zpa;
    double operator()(const LinearGaussian& m) const { return -1.0 / (m.std * m.std); }
    double operator()(const GaussianMarginal& m) const { return -1.0 / (m.std * m.std); }
    double operator()(const LocationScaleNet& m) const {
      const double s = eval_loc_scale(m, zpa).scale;
      return -1.0 / (s * s);
    }
    double operator()(const Plateau&) const {
      throw ConfigError("plateau: family is not twice differentiable");
    }
    double operator()(const Pushed&) const {
      throw ConfigError("pushed: second score derivative unsupported");
    }
  };
  return std::visit(Visitor{zpa}, family_);
}

double Mechanism::sample(std::span<const double> zpa, Rng& rng) const {
  if (zpa.size() != parents_.size()) throw ConfigError("mechanism: parent value count mismatch");
  struct Visitor {
    std::span<const double> zpa;
    Rng& rng;
    double operator()(const LinearGaussian& m) const {
      double mean = m.bias;
      for (std::size_t j = 0; j < zpa.size(); ++j) mean += m.weights[j] * zpa[j];
      return mean + m.std * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
    double operator()(const GaussianMarginal& m) const {
      return m.mean + m.std * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
    double operator()(const LocationScaleNet& m) const {
      const LocScale ls = eval_loc_scale(m, zpa);
      return ls.loc + ls.scale * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
    double operator()(const Plateau& m) const {
      // Inverse CDF over the three pieces; intervals are half-open [lo, hi).
      const double left = 0.5 * std::sqrt(std::numbers::pi / m.a);
      const double end = m.plateau_end();
      const double right = 0.5 * std::sqrt(std::numbers::pi / m.b);
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * (left + end + right);
      if (u < left) {
        // ∫_{-∞}^z exp(-a t²) dt = left · erfc(-√a z)
        return -boost::math::erfc_inv(std::max(u / left, 1e-300)) / std::sqrt(m.a);
      }
      if (u < left + end) return u - left;
      const double v = std::min((u - left - end) / right, std::nextafter(1.0, 0.0));
      return end + boost::math::erf_inv(v) / std::sqrt(m.b);
    }
    double operator()(const Pushed& m) const {
      std::vector<double> inner_pa(zpa.size());
      for (std::size_t j = 0; j < zpa.size(); ++j) inner_pa[j] = m.parents[j].inverse(zpa[j]);
      return m.self(m.inner->sample(inner_pa, rng));
    }
  };
  return std::visit(Visitor{zpa, rng}, family_);
}

void to_json(nlohmann::json& j, const Mechanism& m) {
  std::vector<int> parents1;
  for (int p : m.parents()) parents1.push_back(p + 1);
  struct Visitor {
    nlohmann::json& j;
    void operator()(const LinearGaussian& f) const {
      j["weights"] = f.weights;
      j["bias"] = f.bias;
      j["std"] = f.std;
    }
    void operator()(const GaussianMarginal& f) const {
      j["mean"] = f.mean;
      j["std"] = f.std;
    }
    void operator()(const LocationScaleNet& f) const {
      j["loc_net"] = f.loc;
      j["scale_net"] = f.scale;
      j["floor"] = f.floor;
    }
    void operator()(const Plateau& f) const {
      j["a"] = f.a;
      j["b"] = f.b;
    }
    void operator()(const Pushed&) const {
      throw ConfigError("pushed mechanisms are not serializable");
    }
  };
  j = nlohmann::json{{"family", m.family_name()}, {"parents", parents1}};
  std::visit(Visitor{j}, m.family());
}

Mechanism mechanism_from_json(const nlohmann::json& j) {
  std::vector<int> parents;
  for (int p : j.at("parents").get<std::vector<int>>()) parents.push_back(p - 1);
  const std::string family = j.at("family");
  if (family == "linear-gaussian")
    return Mechanism(LinearGaussian{j.at("weights").get<std::vector<double>>(),
                                    j.value("bias", 0.0), j.at("std").get<double>()},
                     std::move(parents));
  if (family == "gaussian-marginal")
    return Mechanism(GaussianMarginal{j.at("mean").get<double>(), j.at("std").get<double>()},
                     std::move(parents));
  if (family == "location-scale-net")
    return Mechanism(LocationScaleNet{j.at("loc_net").get<DenseNet>(),
                                      j.at("scale_net").get<DenseNet>(), j.value("floor", 0.1)},
                     std::move(parents));
  if (family == "plateau")
    return Mechanism(Plateau{j.at("a").get<double>(), j.at("b").get<double>()}, std::move(parents));
  throw ConfigError("unknown mechanism family '" + family + "'");
}

}  // namespace cauca
