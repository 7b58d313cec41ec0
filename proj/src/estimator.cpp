// SPDX-License-Identifier: Apache-2.0

#include "sag/estimator.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace sag {

SubSchedule make_sub_schedule(const NoiseSchedule& schedule, int t, int n) {
  if (n < 1) throw std::invalid_argument(fmt::format("estimate needs n >= 1, got {}", n));
  if (t < 1 || t > schedule.num_steps()) {
    throw std::out_of_range(fmt::format("step {} outside [1, {}]", t, schedule.num_steps()));
  }
  SubSchedule sub;
  sub.parent_step = t;
  sub.n = n;
  sub.alpha.resize(n + 1);
  sub.sigma.resize(n + 1);
  for (int tau = 0; tau <= n; ++tau) {
    const double u = static_cast<double>(t) * tau / n;
    sub.alpha[tau] = schedule.alpha_at(u);
  }
  sub.alpha[0] = 1.0;
  sub.alpha[n] = schedule.alpha(t);
  for (int tau = 0; tau <= n; ++tau) {
    sub.sigma[tau] = std::sqrt(1.0 - sub.alpha[tau]) / std::sqrt(sub.alpha[tau]);
  }
  sub.step.resize(n);
  for (int tau = 0; tau < n; ++tau) {
    sub.step[tau] = sub.sigma[tau + 1] - sub.sigma[tau];
    if (!(sub.step[tau] > 0.0)) {
      throw std::invalid_argument(fmt::format("sub-schedule sigma not increasing at tau = {}", tau));
    }
  }
  return sub;
}

Vector euler_substep(const ScoreModel& model, const SubSchedule& sub, const Vector& state,
                     int tau) {
  return state + model.eps(state, sub.level(tau)) * sub.forward_step(tau);
}

Vector top_substep(const SubSchedule& sub, const Vector& x_t, const Vector& eps) {
  const double alpha = sub.alpha[sub.n];
  return (x_t - std::sqrt(1.0 - alpha) * eps) / std::sqrt(alpha) + sub.sigma[sub.n - 1] * eps;
}

Vector top_substep_adjoint(const SubSchedule& sub, const Vector& lambda, const Vector& jt_lambda) {
  const double alpha = sub.alpha[sub.n];
  const Vector vx = jt_lambda / std::sqrt(alpha);
  return (lambda - std::sqrt(1.0 - alpha) * vx) / std::sqrt(alpha) + sub.sigma[sub.n - 1] * vx;
}

CheckpointTrajectory estimate_clean(const ScoreModel& model, const NoiseSchedule& schedule,
                                    const Vector& x_t, int t, int n) {
  if (x_t.size() != model.dim()) {
    throw std::invalid_argument(
        fmt::format("state has dimension {} but model expects {}", x_t.size(), model.dim()));
  }
  CheckpointTrajectory traj{make_sub_schedule(schedule, t, n), {}, x_t, {}};
  traj.states.resize(n + 1);
  traj.states[n] = schedule.to_scaled(x_t, t);
  for (int tau = n; tau >= 1; --tau) {
    traj.states[tau - 1] =
        tau == n ? top_substep(traj.sub, x_t, model.eps(traj.states[n], traj.sub.level(n)))
                 : euler_substep(model, traj.sub, traj.states[tau], tau);
    if (!all_finite(traj.states[tau - 1])) {
      throw DivergenceError(fmt::format("clean estimate diverged at tau = {} (step t = {}, |x| = {})",
                                        tau - 1, t, traj.states[tau].norm()));
    }
  }
  // alpha at the clean end is exactly 1.
  traj.clean_output = traj.states[0] * std::sqrt(traj.sub.alpha[0]);
  return traj;
}

Vector one_step_estimate(const ScoreModel& model, const NoiseSchedule& schedule,
                         const Vector& x_t, int t) {
  const double alpha = schedule.alpha(t);
  const Vector eps = eps_at(model, x_t, schedule, t);
  return (x_t - std::sqrt(1.0 - alpha) * eps) / std::sqrt(alpha);
}

std::vector<ErrorCurvePoint> estimation_error_curve(const ScoreModel& model,
                                                    const NoiseSchedule& schedule, int t,
                                                    const std::vector<int>& n_list, int n_ref,
                                                    int num_samples, std::uint64_t seed,
                                                    const StateSampler& draw_x_t) {
  if (n_list.empty()) throw std::invalid_argument("n_list is empty");
  const int n_max = *std::max_element(n_list.begin(), n_list.end());
  if (n_ref < 8 * n_max) {
    throw std::invalid_argument(
        fmt::format("reference n = {} must be at least 8 x max(n) = {}", n_ref, 8 * n_max));
  }
  if (num_samples < 50) throw std::invalid_argument("error curve needs at least 50 samples");

  Rng rng(seed);
  std::vector<std::vector<double>> errors(n_list.size());
  for (int s = 0; s < num_samples; ++s) {
    const Vector x_t = draw_x_t(rng);
    const Vector reference = estimate_clean(model, schedule, x_t, t, n_ref).clean_output;
    for (std::size_t i = 0; i < n_list.size(); ++i) {
      const Vector estimate = estimate_clean(model, schedule, x_t, t, n_list[i]).clean_output;
      errors[i].push_back((estimate - reference).norm());
    }
  }

  std::vector<ErrorCurvePoint> curve;
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    const auto& e = errors[i];
    double mean = 0.0;
    for (double v : e) mean += v;
    mean /= static_cast<double>(e.size());
    double var = 0.0;
    for (double v : e) var += (v - mean) * (v - mean);
    var /= static_cast<double>(e.size() - 1);
    curve.push_back({n_list[i], mean, std::sqrt(var / static_cast<double>(e.size())), num_samples,
                     seed});
  }
  return curve;
}

StateSampler gaussian_sampler(Index dim) {
  return [dim](Rng& rng) { return standard_normal(dim, rng); };
}

}  // namespace sag
