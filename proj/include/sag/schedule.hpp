// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/types.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace sag {

/// Discrete cumulative signal schedule alpha[0..T] with alpha[0] = 1.
///
/// The scaled coordinates xbar = x / sqrt(alpha) and sigma = sqrt(1 - alpha) / sqrt(alpha)
/// turn deterministic DDIM into the ODE d xbar = eps(xbar, sigma) d sigma.
/// Immutable after construction.
class NoiseSchedule {
 public:
  /// Validates: T >= 1, alpha.size() == T + 1, alpha[0] == 1, alpha strictly
  /// decreasing and positive.
  explicit NoiseSchedule(std::vector<double> alpha);

  int num_steps() const { return static_cast<int>(alpha_.size()) - 1; }
  double alpha(int t) const;
  const std::vector<double>& alphas() const { return alpha_; }

  double sigma(int t) const;
  NoiseLevel level(int t) const;

  /// Log-linear interpolation of alpha at a continuous step index u in [0, T].
  /// Exact at integer knots.
  double alpha_at(double u) const;

  Vector to_scaled(const Vector& x, int t) const;
  Vector from_scaled(const Vector& xbar, int t) const;

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  void check_step(int t) const;

  std::vector<double> alpha_;
  std::vector<double> sigma_;
};

/// alpha[t] = prod_{s<=t} (1 - beta_s) with beta linearly spaced in [beta_min, beta_max].
NoiseSchedule build_linear_schedule(int num_steps, double beta_min, double beta_max);

}  // namespace sag
