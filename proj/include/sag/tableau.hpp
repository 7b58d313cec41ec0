// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/types.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace sag {

/// Explicit Runge-Kutta tableau (a, b, c) paired with the adjoint tableau
/// (A, B, C) used to integrate the cotangent.
///
/// The pair is symplectic when B_i = b_i != 0, C_i = c_i and
/// b_i A_ij + B_j a_ji - b_i B_j = 0 for all i, j; the backward solve is then
/// the exact transpose of the forward map.
struct ButcherTableau {
  int stages = 0;
  Matrix a;
  Vector b;
  Vector c;
  Matrix adj_a;
  Vector adj_b;
  Vector adj_c;

  /// Max |b_i A_ij + B_j a_ji - b_i B_j| over all i, j.
  double condition_residual() const;

  /// Throws std::invalid_argument on shape errors, a non-explicit forward
  /// tableau, B != b, C != c, zero b_i, or residual above `tolerance`.
  void validate(double tolerance = 1e-15) const;

  nlohmann::json to_json() const;
  static ButcherTableau from_json(const nlohmann::json& j);
};

/// Solves the conjugacy conditions for the adjoint coefficients:
/// B = b, C = c, A_ij = b_j (1 - a_ji / b_i).
ButcherTableau conjugate_tableau(Matrix a, Vector b, Vector c);

/// s = 1, b = [1], c = [0]: forward Euler with its symplectic partner.
ButcherTableau euler_tableau();

/// Heun's method (a_21 = 1, b = [1/2, 1/2], c = [0, 1]) with its symplectic partner.
ButcherTableau heun_tableau();

}  // namespace sag
