#pragma once

#include "cauca/core.hpp"

#include "json.hpp"

#include <span>
#include <string>
#include <vector>

namespace cauca {

enum class Activation { kLeakyTanh, kTanh, kIdentity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Small fully connected scalar-output network used as a ground-truth
/// location or scale function. Evaluated one point at a time.
class DenseNet {
 public:
  DenseNet() = default;
  /// `widths` lists layer sizes input..output; weights[l] is widths[l+1] × widths[l].
  DenseNet(std::vector<Matrix> weights, std::vector<Vector> biases, Activation act);

  /// Random net in → width → width → 1 with N(0, 1/fan_in) weights and
  /// N(0, 0.1²) biases.
  static DenseNet random(int in, int width, Activation act, Rng& rng);

  int input_dim() const { return in_dim_; }
  Activation activation() const { return act_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  const std::vector<Vector>& biases() const { return biases_; }

  double operator()(std::span<const double> x) const;
  /// Value and gradient with respect to the input.
  double value_and_grad(std::span<const double> x, std::span<double> grad) const;

  friend void to_json(nlohmann::json& j, const DenseNet& net);
  friend void from_json(const nlohmann::json& j, DenseNet& net);

 private:
  int in_dim_ = 0;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
  Activation act_ = Activation::kLeakyTanh;
};

}  // namespace cauca
