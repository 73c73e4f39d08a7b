#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace cauca {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Row-per-sample batches: n × d.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

/// Base of all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input, configuration or precondition (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: divergence, non-convergence, undefined values (CLI exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

class InvalidIntervention : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NonDifferentiablePoint : public NumericError {
 public:
  using NumericError::NumericError;
};

class DivergedTraining : public NumericError {
 public:
  DivergedTraining(const std::string& what, int epoch)
      : NumericError(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline double normal_log_pdf(double z, double mean, double std) {
  const double u = (z - mean) / std;
  return -0.5 * u * u - std::log(std) - 0.5 * kLog2Pi;
}

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Derives an independent generator for a sub-task from a master seed.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

}  // namespace cauca
