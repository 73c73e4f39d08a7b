#include "cauca/dense_net.hpp"

namespace cauca {
namespace {

double act_value(Activation a, double x) {
  switch (a) {
    case Activation::kLeakyTanh: return std::tanh(x) + 0.1 * x;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

double act_deriv(Activation a, double x) {
  switch (a) {
    case Activation::kLeakyTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t + 0.1;
    }
    case Activation::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::kIdentity: return 1.0;
  }
  return 1.0;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLeakyTanh: return "leaky-tanh";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "leaky-tanh") return Activation::kLeakyTanh;
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + s + "'");
}

DenseNet::DenseNet(std::vector<Matrix> weights, std::vector<Vector> biases, Activation act)
    : weights_(std::move(weights)), biases_(std::move(biases)), act_(act) {
  if (weights_.empty() || weights_.size() != biases_.size())
    throw ConfigError("DenseNet: weights and biases must be nonempty and equal in count");
  in_dim_ = static_cast<int>(weights_.front().cols());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l].rows() != biases_[l].size())
      throw ConfigError("DenseNet: bias size mismatch");
    if (l > 0 && weights_[l].cols() != weights_[l - 1].rows())
      throw ConfigError("DenseNet: layer shape mismatch");
  }
  if (weights_.back().rows() != 1) throw ConfigError("DenseNet: output must be scalar");
}

DenseNet DenseNet::random(int in, int width, Activation act, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::vector<int> sizes{in, width, width, 1};
  std::vector<Matrix> w;
  std::vector<Vector> b;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(std::max(sizes[l], 1)));
    Matrix m(sizes[l + 1], sizes[l]);
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = scale * normal(rng);
    Vector v(sizes[l + 1]);
    for (Index r = 0; r < v.size(); ++r) v(r) = 0.1 * normal(rng);
    w.push_back(std::move(m));
    b.push_back(std::move(v));
  }
  return DenseNet(std::move(w), std::move(b), act);
}

double DenseNet::operator()(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != in_dim_) throw ConfigError("DenseNet: input size mismatch");
  Vector h = Eigen::Map<const Vector>(x.data(), in_dim_);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Vector a = weights_[l] * h + biases_[l];
    if (l + 1 < weights_.size()) a = a.unaryExpr([&](double v) { return act_value(act_, v); });
    h = std::move(a);
  }
  return h(0);
}

double DenseNet::value_and_grad(std::span<const double> x, std::span<double> grad) const {
  if (static_cast<int>(x.size()) != in_dim_ || grad.size() != x.size())
    throw ConfigError("DenseNet: input size mismatch");
  std::vector<Vector> pre;
  Vector h = Eigen::Map<const Vector>(x.data(), in_dim_);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Vector a = weights_[l] * h + biases_[l];
    if (l + 1 < weights_.size()) {
      pre.push_back(a);
      a = a.unaryExpr([&](double v) { return act_value(act_, v); });
    }
    h = std::move(a);
  }
  // Reverse pass: d out / d h_l.
  Vector g = weights_.back().row(0).transpose();
  for (std::size_t l = weights_.size() - 1; l-- > 0;) {
    g = g.cwiseProduct(pre[l].unaryExpr([&](double v) { return act_deriv(act_, v); }));
    g = weights_[l].transpose() * g;
  }
  for (int i = 0; i < in_dim_; ++i) grad[i] = g(i);
  return h(0);
}

void to_json(nlohmann::json& j, const DenseNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < net.weights_.size(); ++l) {
    const Matrix& w = net.weights_[l];
    std::vector<double> flat;
    flat.reserve(w.size());
    for (Index r = 0; r < w.rows(); ++r)
      for (Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    std::vector<double> bias(net.biases_[l].data(), net.biases_[l].data() + net.biases_[l].size());
    layers.push_back({{"shape", {w.rows(), w.cols()}}, {"weights", flat}, {"bias", bias}});
  }
  j = {{"activation", to_string(net.act_)}, {"layers", layers}};
}

void from_json(const nlohmann::json& j, DenseNet& net) {
  std::vector<Matrix> w;
  std::vector<Vector> b;
  for (const auto& layer : j.at("layers")) {
    const auto shape = layer.at("shape").get<std::vector<Index>>();
    const auto flat = layer.at("weights").get<std::vector<double>>();
    const auto bias = layer.at("bias").get<std::vector<double>>();
    if (shape.size() != 2 || static_cast<Index>(flat.size()) != shape[0] * shape[1])
      throw ConfigError("DenseNet JSON: weight shape mismatch");
    Matrix m(shape[0], shape[1]);
    for (Index r = 0; r < shape[0]; ++r)
      for (Index c = 0; c < shape[1]; ++c) m(r, c) = flat[r * shape[1] + c];
    w.push_back(std::move(m));
    b.push_back(Eigen::Map<const Vector>(bias.data(), static_cast<Index>(bias.size())));
  }
  net = DenseNet(std::move(w), std::move(b), activation_from_string(j.at("activation")));
}

}  // namespace cauca
