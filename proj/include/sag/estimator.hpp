// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/schedule.hpp"
#include "sag/score_model.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace sag {

/// Uniform grid of n sub-steps from parent step t down to 0.
///
/// Index tau runs n..0; tau = n sits at parent step t and tau = 0 at the clean
/// end. Sub-steps are uniform in continuous step index with alpha
/// interpolated log-linearly, so both endpoints are exact.
struct SubSchedule {
  int parent_step = 0;
  int n = 0;
  std::vector<double> alpha;  // [tau], alpha[0] == 1, alpha[n] == parent alpha
  std::vector<double> sigma;  // [tau], strictly increasing in tau, sigma[0] == 0
  std::vector<double> step;   // [tau] for tau < n: sigma[tau + 1] - sigma[tau] > 0

  NoiseLevel level(int tau) const { return {alpha[tau], sigma[tau]}; }
  /// Signed step taken by the forward solve from tau to tau - 1 (negative).
  double forward_step(int tau) const { return sigma[tau - 1] - sigma[tau]; }
};

SubSchedule make_sub_schedule(const NoiseSchedule& schedule, int t, int n);

/// Forward Euler solve of the clean-output ODE with every state retained.
struct CheckpointTrajectory {
  SubSchedule sub;
  std::vector<Vector> states;  // [tau] scaled states, states[n] = x_t / sqrt(alpha_t)
  Vector input;                // x_t in data coordinates
  Vector clean_output;

  int n() const { return sub.n; }
  std::size_t checkpoints_stored() const { return states.size(); }
};

/// n-step estimate of the clean output from x_t:
///   xbar_{tau-1} = xbar_tau + eps_bar(xbar_tau, sigma_tau) (sigma_{tau-1} - sigma_tau)
/// Throws DivergenceError with the offending tau if a state turns non-finite.
CheckpointTrajectory estimate_clean(const ScoreModel& model, const NoiseSchedule& schedule,
                                    const Vector& x_t, int t, int n);

/// One Euler step of the estimate, shared with every replay path.
Vector euler_substep(const ScoreModel& model, const SubSchedule& sub, const Vector& state,
                     int tau);

/// The first step (tau = n) written from the data-coordinate input:
///   xbar_{n-1} = (x_t - sqrt(1 - alpha_t) eps) / sqrt(alpha_t) + sigma_{n-1} eps
/// Same map as euler_substep; with n = 1 it is one_step_estimate bit for bit.
Vector top_substep(const SubSchedule& sub, const Vector& x_t, const Vector& eps);

/// Cotangent of x_t through top_substep. `jt_lambda` is J^T lambda taken in
/// scaled coordinates at states[n].
Vector top_substep_adjoint(const SubSchedule& sub, const Vector& lambda, const Vector& jt_lambda);

/// Closed-form (x_t - sqrt(1 - alpha_t) eps) / sqrt(alpha_t).
Vector one_step_estimate(const ScoreModel& model, const NoiseSchedule& schedule,
                         const Vector& x_t, int t);

struct ErrorCurvePoint {
  int n = 0;
  double mean_error = 0.0;
  double stderr_ = 0.0;
  int num_samples = 0;
  std::uint64_t seed = 0;
};

using StateSampler = std::function<Vector(Rng&)>;

/// Mean ||x'_0(n) - x'_0(n_ref)|| over num_samples states drawn by `draw_x_t`.
/// Requires n_ref >= 8 max(n_list) and num_samples >= 50.
std::vector<ErrorCurvePoint> estimation_error_curve(const ScoreModel& model,
                                                    const NoiseSchedule& schedule, int t,
                                                    const std::vector<int>& n_list, int n_ref,
                                                    int num_samples, std::uint64_t seed,
                                                    const StateSampler& draw_x_t);

/// Standard-normal state sampler for models without a data distribution.
StateSampler gaussian_sampler(Index dim);

}  // namespace sag
