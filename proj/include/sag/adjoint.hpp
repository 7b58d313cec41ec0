// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/estimator.hpp"
#include "sag/score_model.hpp"
#include "sag/tableau.hpp"

#include <cstddef>
#include <vector>

namespace sag {

/// Vector-count accounting for one gradient computation.
struct AdjointStats {
  std::size_t checkpoints_stored = 0;   // forward states the method keeps for the backward pass
  std::size_t stage_records = 0;        // RK stage points kept (s per step)
  std::size_t peak_extra_vectors = 0;   // live vectors allocated by the backward pass itself
  std::size_t stored_activations = 0;   // model intermediates held simultaneously
  std::size_t model_calls = 0;          // Jacobian products evaluated
};

/// Symplectic Euler adjoint:
///   lambda_{tau+1} = lambda_tau - h_tau J(states[tau+1], sigma_{tau+1})^T lambda_tau
/// for tau = 0..n-1, always at the restored forward checkpoint. Returns
/// dL/dx_t = lambda_n / sqrt(alpha_t). `grad_at_clean` is dL/dx'_0.
Vector symplectic_euler_grad(const ScoreModel& model, const CheckpointTrajectory& traj,
                             const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                             AdjointStats* stats = nullptr);

/// Plain reverse mode through the discrete Euler map: replays the forward solve
/// from states[n] while keeping every model tape, then applies
/// (I + dsigma J)^T step by step. Memory grows with n times the tape size.
Vector direct_backprop_grad(const ScoreModel& model, const CheckpointTrajectory& traj,
                            const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                            AdjointStats* stats = nullptr);

/// Continuous-adjoint baseline: integrates state and cotangent together from
/// sigma = 0 up to sigma_t with explicit Euler over `n_back` sub-steps,
/// evaluating eps and its Jacobian at the recomputed backward state.
Vector vanilla_adjoint_grad(const ScoreModel& model, const Vector& x_clean,
                            const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                            int n_back, AdjointStats* stats = nullptr);

/// Forward RK solve with all stage points retained.
struct RkCheckpointTrajectory {
  SubSchedule sub;
  ButcherTableau tableau;
  std::vector<Vector> states;                    // [tau]
  std::vector<std::vector<Vector>> stage_points;  // [tau][i], tau = 1..n (index 0 unused)
  std::vector<std::vector<Vector>> stage_slopes;  // [tau][i]
  std::vector<std::vector<NoiseLevel>> stage_levels;
  Vector clean_output;

  int n() const { return sub.n; }
};

/// Noise level of stage i in the step from tau to tau - 1: sigma_tau + c_i h.
/// c = 0 and c = 1 land exactly on the sub-schedule knots.
NoiseLevel rk_stage_level(const SubSchedule& sub, int tau, double c);

RkCheckpointTrajectory estimate_clean_rk(const ScoreModel& model, const NoiseSchedule& schedule,
                                         const Vector& x_t, int t, int n,
                                         const ButcherTableau& tableau);

/// Symplectic RK adjoint using the tableau's (A, B, C) at the restored stage
/// points. Exact transpose of the RK forward map.
Vector symplectic_rk_grad(const ScoreModel& model, const RkCheckpointTrajectory& traj,
                          const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                          AdjointStats* stats = nullptr);

/// Reverse mode through the RK forward map using stored stage tapes.
Vector direct_backprop_rk_grad(const ScoreModel& model, const RkCheckpointTrajectory& traj,
                               const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                               AdjointStats* stats = nullptr);

/// S_tau = lambda_tau^T delta_tau along the Euler trajectory, tau = 0..n.
/// delta starts at v0 (tangent at x_t, scaled coordinates) and is pushed
/// forward with exact JVPs; lambda starts at lambda0 (at the clean end) and is
/// pulled back with the symplectic Euler rule.
std::vector<double> conservation_probe(const ScoreModel& model, const CheckpointTrajectory& traj,
                                       const Vector& v0, const Vector& lambda0);

}  // namespace sag
