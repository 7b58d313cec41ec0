// SPDX-License-Identifier: Apache-2.0
//
// Test-only oracles. Nothing here calls the adjoint solvers: gradients are
// rebuilt either by forward-mode Jacobian propagation (model JVPs only) or by
// central differences through the forward solve.

#pragma once

#include "sag/adjoint.hpp"
#include "sag/estimator.hpp"
#include "sag/gmm_model.hpp"
#include "sag/losses.hpp"
#include "sag/mlp_model.hpp"
#include "sag/schedule.hpp"
#include "sag/tableau.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

namespace sag::testing {

inline Vector random_vector(Index d, Rng& rng, double scale = 1.0) {
  return scale * standard_normal(d, rng);
}

inline NoiseSchedule default_schedule() { return build_linear_schedule(50, 0.002, 0.4); }

inline GmmModel two_mode_gmm(Index d, double spread = 2.0) {
  Vector mu = Vector::Constant(d, spread / std::sqrt(static_cast<double>(d)));
  return GmmModel({0.5, 0.5}, {-mu, mu});
}

inline GmmModel random_gmm(Index d, int k, Rng& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<double> w(k);
  double total = 0.0;
  for (auto& x : w) total += (x = u(rng));
  for (auto& x : w) x /= total;
  std::vector<Vector> means;
  for (int i = 0; i < k; ++i) means.push_back(random_vector(d, rng, 1.5));
  return GmmModel(w, means);
}

inline MlpModel random_mlp(int d, std::uint64_t seed, int hidden = 16, int layers = 2) {
  std::vector<int> widths{d};
  for (int l = 0; l < layers; ++l) widths.push_back(hidden);
  widths.push_back(d);
  return MlpModel::random(widths, seed);
}

/// Full Jacobian d eps_bar / d xbar assembled column by column from JVPs.
inline Matrix jacobian_from_jvp(const ScoreModel& model, const Vector& xbar, NoiseLevel level) {
  const Index d = model.dim();
  Matrix j(d, d);
  for (Index c = 0; c < d; ++c) j.col(c) = model.jvp(xbar, level, Vector::Unit(d, c));
  return j;
}

/// d x'_0 / d x_t for the Euler estimate, by forward-mode propagation of the
/// variational matrix along the stored states.
inline Matrix euler_sensitivity(const ScoreModel& model, const CheckpointTrajectory& traj,
                                const NoiseSchedule& schedule, int t) {
  const auto& sub = traj.sub;
  Matrix delta = Matrix::Identity(model.dim(), model.dim()) / std::sqrt(schedule.alpha(t));
  for (int tau = sub.n; tau >= 1; --tau) {
    const Matrix jac = jacobian_from_jvp(model, traj.states[tau], sub.level(tau));
    delta = delta + sub.forward_step(tau) * (jac * delta);
  }
  return delta;
}

inline Vector forward_mode_grad(const ScoreModel& model, const CheckpointTrajectory& traj,
                                const Vector& g, const NoiseSchedule& schedule, int t) {
  return euler_sensitivity(model, traj, schedule, t).transpose() * g;
}

/// Same construction for an RK trajectory: stage sensitivities
/// dX_i = delta + h sum_j a_ij dK_j, dK_i = J(X_i) dX_i.
inline Vector forward_mode_rk_grad(const ScoreModel& model, const RkCheckpointTrajectory& traj,
                                   const Vector& g, const NoiseSchedule& schedule, int t) {
  const auto& sub = traj.sub;
  const auto& tab = traj.tableau;
  const Index d = model.dim();
  Matrix delta = Matrix::Identity(d, d) / std::sqrt(schedule.alpha(t));
  for (int tau = sub.n; tau >= 1; --tau) {
    const double h = sub.forward_step(tau);
    std::vector<Matrix> dk;
    for (int i = 0; i < tab.stages; ++i) {
      Matrix dx = delta;
      for (int j = 0; j < i; ++j) dx += h * tab.a(i, j) * dk[j];
      const Matrix jac =
          jacobian_from_jvp(model, traj.stage_points[tau][i], traj.stage_levels[tau][i]);
      dk.push_back(jac * dx);
    }
    Matrix next = delta;
    for (int i = 0; i < tab.stages; ++i) next += h * tab.b[i] * dk[i];
    delta = next;
  }
  return delta.transpose() * g;
}

/// Central differences of x_t -> L(estimate(x_t)) for a scalar loss.
inline Vector fd_gradient(const std::function<double(const Vector&)>& loss_of_xt, const Vector& x,
                          double rel_step = 1e-5) {
  Vector out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * (1.0 + std::abs(x[i]));
    Vector p = x;
    Vector m = x;
    p[i] += h;
    m[i] -= h;
    out[i] = (loss_of_xt(p) - loss_of_xt(m)) / (2.0 * h);
  }
  return out;
}

inline double rel_err(const Vector& a, const Vector& b, double floor = 1e-300) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

/// Gradient of L(x0_hat(x_t)) from the closed-form one-step estimate
///   x0_hat = (x_t - sqrt(1 - alpha) eps(x_t)) / sqrt(alpha),
/// differentiated by hand in data coordinates.
inline Vector one_step_guidance_grad(const ScoreModel& model, const NoiseSchedule& schedule,
                                     const GuidanceLoss& loss, const Vector& x_t, int t) {
  const double alpha = schedule.alpha(t);
  const Vector eps = eps_at(model, x_t, schedule, t);
  const Vector x0_hat = (x_t - std::sqrt(1.0 - alpha) * eps) / std::sqrt(alpha);
  const Vector g = loss.evaluate(x0_hat).grad;
  return (g - std::sqrt(1.0 - alpha) * vjp_at(model, x_t, schedule, t, g)) / std::sqrt(alpha);
}

/// Independent one-step-estimate guided sampler: DDIM written out from the
/// closed form, constant rho inside [lo, hi], no repeats, no normalization.
inline Vector one_step_guided_sample(const ScoreModel& model, const NoiseSchedule& schedule,
                                     const GuidanceLoss& loss, int lo, int hi, double rho,
                                     std::uint64_t seed) {
  Rng rng(seed);
  Vector x(model.dim());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
  for (int t = schedule.num_steps(); t >= 1; --t) {
    const double a = schedule.alpha(t);
    const double a_prev = schedule.alpha(t - 1);
    const Vector eps = eps_at(model, x, schedule, t);
    const Vector x0_hat = (x - std::sqrt(1.0 - a) * eps) / std::sqrt(a);
    Vector next = std::sqrt(a_prev) * x0_hat + std::sqrt(1.0 - a_prev) * eps;
    if (t >= lo && t <= hi) next -= rho * one_step_guidance_grad(model, schedule, loss, x, t);
    x = next;
  }
  return x;
}

}  // namespace sag::testing
