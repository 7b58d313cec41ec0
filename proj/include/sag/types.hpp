// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <random>
#include <stdexcept>
#include <string>

namespace sag {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Random stream shared by every sampling routine. Seeded explicitly so runs replay.
using Rng = std::mt19937_64;

/// Point on the noise axis. Both coordinates are carried so that callers which
/// already know alpha exactly (integer steps, sub-schedule knots) never re-derive it.
struct NoiseLevel {
  double alpha = 1.0;
  double sigma = 0.0;

  /// alpha = 1 / (1 + sigma^2)
  static NoiseLevel from_sigma(double sigma);
  static NoiseLevel from_alpha(double alpha);
};

/// Raised when an ODE state, adjoint or sample stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by configuration loaders and validators.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

bool all_finite(const Vector& v);

/// Draws a vector of independent standard normals.
Vector standard_normal(Index dim, Rng& rng);

/// ||a - b|| / max(||b||, floor)
double relative_error(const Vector& a, const Vector& b, double floor = 1e-300);

}  // namespace sag
