#include "cauca/mixing.hpp"

#include <Eigen/LU>

namespace cauca {

double leaky_tanh(double x) { return std::tanh(x) + 0.1 * x; }

double leaky_tanh_deriv(double x) {
  const double t = std::tanh(x);
  return 1.0 - t * t + 0.1;
}

double leaky_tanh_inverse(double y, double tol) {
  // σ(x) ∈ [0.1x − 1, 0.1x + 1] and |σ(x)| ≥ 1.1|x| near zero, so the root lies in
  // the closed interval spanned by y/1.1 − 1 and y/0.1 + 1 (and symmetric).
  double lo = std::min(y / 1.1, y / 0.1) - 1.0;
  double hi = std::max(y / 1.1, y / 0.1) + 1.0;
  double x = y / 1.1;
  for (int it = 0; it < 100; ++it) {
    const double g = leaky_tanh(x) - y;
    if (std::abs(g) <= tol * std::max(1.0, std::abs(y))) return x;
    if (g > 0.0) hi = x; else lo = x;
    double next = x - g / leaky_tanh_deriv(x);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == x) return x;
    x = next;
  }
  throw NumericError("leaky_tanh_inverse: Newton did not converge");
}

MixingFunction::MixingFunction(std::vector<Matrix> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("MixingFunction: at least one layer required");
  d_ = static_cast<int>(layers_.front().rows());
  for (const Matrix& a : layers_) {
    if (a.rows() != d_ || a.cols() != d_) throw ConfigError("MixingFunction: layers must be d × d");
    const double det = a.determinant();
    if (det == 0.0) throw ConfigError("MixingFunction: singular layer");
    log_abs_dets_.push_back(std::log(std::abs(det)));
  }
}

Vector MixingFunction::forward(const Vector& z) const {
  Vector h = z;
  for (const Matrix& a : layers_) h = (a * h).unaryExpr(&leaky_tanh);
  return h;
}

Matrix MixingFunction::forward_batch(const Matrix& z) const {
  Matrix h = z;
  for (const Matrix& a : layers_) h = (h * a.transpose()).unaryExpr(&leaky_tanh);
  return h;
}

double MixingFunction::log_abs_det_jacobian(const Vector& z) const {
  double total = 0.0;
  Vector h = z;
  for (std::size_t m = 0; m < layers_.size(); ++m) {
    const Vector pre = layers_[m] * h;
    total += log_abs_dets_[m];
    for (Index i = 0; i < pre.size(); ++i) total += std::log(leaky_tanh_deriv(pre(i)));
    h = pre.unaryExpr(&leaky_tanh);
  }
  return total;
}

Vector MixingFunction::log_abs_det_jacobian_batch(const Matrix& z) const {
  Vector out(z.rows());
  for (Index r = 0; r < z.rows(); ++r) out(r) = log_abs_det_jacobian(Vector(z.row(r).transpose()));
  return out;
}

Vector MixingFunction::inverse(const Vector& x, double tol) const {
  Vector h = x;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    Vector pre(h.size());
    for (Index i = 0; i < h.size(); ++i) pre(i) = leaky_tanh_inverse(h(i));
    h = it->partialPivLu().solve(pre);
  }
  const double err = (forward(h) - x).lpNorm<Eigen::Infinity>();
  if (!(err <= tol * std::max(1.0, x.lpNorm<Eigen::Infinity>())))
    throw NumericError("MixingFunction::inverse: residual " + std::to_string(err) + " above tolerance");
  return h;
}

Matrix MixingFunction::inverse_batch(const Matrix& x, double tol) const {
  Matrix z(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) z.row(r) = inverse(Vector(x.row(r).transpose()), tol).transpose();
  return z;
}

MixingFunction sample_mixing(int d, int num_layers, Rng& rng) {
  if (d < 1 || num_layers < 1) throw ConfigError("sample_mixing: d and M must be >= 1");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Matrix> layers;
  for (int m = 0; m < num_layers; ++m) {
    Matrix a(d, d);
    do {
      for (Index r = 0; r < d; ++r)
        for (Index c = 0; c < d; ++c) a(r, c) = u01(rng);
    } while (std::abs(a.determinant()) < 0.1);
    layers.push_back(a);
  }
  return MixingFunction(std::move(layers));
}

void to_json(nlohmann::json& j, const MixingFunction& f) {
  nlohmann::json mats = nlohmann::json::array();
  for (const Matrix& a : f.layers_) {
    std::vector<double> flat;
    for (Index r = 0; r < a.rows(); ++r)
      for (Index c = 0; c < a.cols(); ++c) flat.push_back(a(r, c));
    mats.push_back(flat);
  }
  j = {{"d", f.d_}, {"M", f.num_layers()}, {"activation", "leaky-tanh"}, {"layers", mats}};
}

void from_json(const nlohmann::json& j, MixingFunction& f) {
  const int d = j.at("d");
  std::vector<Matrix> layers;
  for (const auto& flat_json : j.at("layers")) {
    const auto flat = flat_json.get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != d * d) throw ConfigError("mixing JSON: layer size mismatch");
    Matrix a(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) a(r, c) = flat[r * d + c];
    layers.push_back(a);
  }
  if (static_cast<int>(layers.size()) != j.at("M").get<int>())
    throw ConfigError("mixing JSON: layer count does not match M");
  f = MixingFunction(std::move(layers));
}

}  // namespace cauca
