// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/adjoint.hpp"
#include "sag/losses.hpp"
#include "sag/schedule.hpp"
#include "sag/score_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

namespace sag {

/// Piecewise-constant integer map over steps: entries cover [from, to] inclusive;
/// steps not covered get `fallback`.
struct StepSchedule {
  struct Piece {
    int from = 0;
    int to = 0;
    int value = 1;
  };
  int fallback = 1;
  std::vector<Piece> pieces;

  int at(int t) const;
  static StepSchedule constant(int value) { return {value, {}}; }
};

/// Guidance is active for t in [window_lo, window_hi].
struct GuidanceConfig {
  int window_lo = 1;
  int window_hi = 1;
  double rho = 0.0;
  StepSchedule repeats = StepSchedule::constant(1);
  StepSchedule n_schedule = StepSchedule::constant(1);
  bool grad_normalize = false;
  bool record_wall_time = false;

  bool guided(int t) const { return t >= window_lo && t <= window_hi; }
  double rho_at(int t) const { return guided(t) ? rho : 0.0; }

  /// 0 < lo < hi < T, rho >= 0 and finite, every repeat and n >= 1.
  void validate(int num_steps) const;

  nlohmann::json to_json() const;
  static GuidanceConfig from_json(const nlohmann::json& j);
};

struct GuidedStep {
  int t = 0;
  int repeat = 0;  // counts down r_t..1
  int n = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct SampleRecord {
  std::uint64_t seed = 0;
  Vector x0;
  double final_loss = 0.0;
  std::vector<GuidedStep> steps;
  std::size_t checkpoints_stored = 0;  // summed over guided steps
  std::size_t peak_checkpoints = 0;    // largest single trajectory
  std::int64_t wall_time_ns = 0;       // guided-step region only; 0 unless recorded

  int steps_guided() const { return static_cast<int>(steps.size()); }
  nlohmann::json to_json() const;
};

/// Deterministic DDIM step (eta = 0):
///   x_{t-1} = sqrt(alpha_{t-1}) x0_hat + sqrt(1 - alpha_{t-1}) eps
Vector ddim_step(const ScoreModel& model, const NoiseSchedule& schedule, const Vector& x_t, int t);

/// sqrt(alpha_t / alpha_{t-1}) x_{t-1} + sqrt((alpha_{t-1} - alpha_t) / alpha_{t-1}) eps'
Vector time_travel_renoise(const Vector& x_prev, const NoiseSchedule& schedule, int t, Rng& rng);
/// Same map with the noise supplied by the caller.
Vector time_travel_renoise(const Vector& x_prev, const NoiseSchedule& schedule, int t,
                           const Vector& noise);

/// Unguided rollout from x_T ~ N(0, I) drawn from Rng(seed).
Vector ddim_sample(const ScoreModel& model, const NoiseSchedule& schedule, std::uint64_t seed);

/// Guidance gradient at one step: n-step estimate plus symplectic Euler adjoint.
struct GuidanceGradient {
  double loss = 0.0;
  Vector grad;
  std::size_t checkpoints_stored = 0;
};
GuidanceGradient guidance_gradient(const ScoreModel& model, const NoiseSchedule& schedule,
                                   const GuidanceLoss& loss, const Vector& x_t, int t, int n);

/// Guided sampling with n-step symplectic adjoint guidance and time travel.
SampleRecord sag_sample(const ScoreModel& model, const NoiseSchedule& schedule,
                        const GuidanceLoss& loss, const GuidanceConfig& config,
                        std::uint64_t seed);

}  // namespace sag
