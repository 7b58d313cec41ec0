// SPDX-License-Identifier: Apache-2.0

#include "sag/adjoint.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace sag {

namespace {

void check_cotangent(const ScoreModel& model, const Vector& g) {
  if (g.size() != model.dim()) {
    throw std::invalid_argument(
        fmt::format("cotangent has dimension {} but model expects {}", g.size(), model.dim()));
  }
}

void check_trajectory(const ScoreModel& model, const SubSchedule& sub,
                      const std::vector<Vector>& states, const NoiseSchedule& schedule, int t) {
  if (sub.n < 1 || states.size() != static_cast<std::size_t>(sub.n) + 1) {
    throw std::invalid_argument("trajectory does not hold n + 1 states");
  }
  if (sub.parent_step != t || sub.sigma[sub.n] != schedule.sigma(t) || sub.sigma[0] != 0.0) {
    throw std::invalid_argument(
        fmt::format("trajectory sigma grid does not match step {} of the schedule", t));
  }
  for (const auto& s : states) {
    if (s.size() != model.dim()) {
      throw std::invalid_argument("trajectory state dimension does not match the model");
    }
  }
}

void check_adjoint(const Vector& lambda, int tau, const char* method) {
  if (!all_finite(lambda)) {
    throw DivergenceError(fmt::format("{} adjoint became non-finite at tau = {}", method, tau));
  }
}

std::size_t tape_vectors(const ForwardTape& tape) { return tape.saved.size() + 1; }

}  // namespace

Vector symplectic_euler_grad(const ScoreModel& model, const CheckpointTrajectory& traj,
                             const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                             AdjointStats* stats) {
  check_trajectory(model, traj.sub, traj.states, schedule, t);
  check_cotangent(model, grad_at_clean);
  const auto& sub = traj.sub;

  std::size_t tape_peak = 0;
  Vector lambda = grad_at_clean * std::sqrt(sub.alpha[0]);
  for (int tau = 0; tau < sub.n; ++tau) {
    // Jacobian at the restored checkpoint, never at a re-integrated state.
    const ForwardTape tape = model.record(traj.states[tau + 1], sub.level(tau + 1));
    tape_peak = std::max(tape_peak, tape_vectors(tape));
    if (tau + 1 == sub.n) {
      lambda = top_substep_adjoint(sub, lambda, model.backward(tape, lambda));
    } else {
      lambda = lambda - sub.step[tau] * model.backward(tape, lambda);
    }
    check_adjoint(lambda, tau + 1, "symplectic Euler");
  }
  if (stats) {
    stats->checkpoints_stored = traj.checkpoints_stored();
    stats->stage_records = 0;
    stats->peak_extra_vectors = 2;  // lambda and one Jacobian product
    stats->stored_activations = tape_peak;
    stats->model_calls = static_cast<std::size_t>(sub.n);
  }
  return lambda;
}

Vector direct_backprop_grad(const ScoreModel& model, const CheckpointTrajectory& traj,
                            const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                            AdjointStats* stats) {
  check_trajectory(model, traj.sub, traj.states, schedule, t);
  check_cotangent(model, grad_at_clean);
  const auto& sub = traj.sub;
  if (traj.input.size() != model.dim()) {
    throw std::invalid_argument("trajectory input dimension does not match the model");
  }

  // Taped forward replay from the initial state, as an autograd engine would record it.
  std::vector<ForwardTape> tapes(static_cast<std::size_t>(sub.n) + 1);
  std::size_t held = 0;
  Vector x = traj.states[sub.n];
  for (int tau = sub.n; tau >= 1; --tau) {
    tapes[tau] = model.record(x, sub.level(tau));
    held += tape_vectors(tapes[tau]);
    x = tau == sub.n ? top_substep(sub, traj.input, tapes[tau].output)
                     : x + tapes[tau].output * sub.forward_step(tau);
    if (x != traj.states[tau - 1]) {
      throw std::invalid_argument(
          fmt::format("trajectory replay disagrees with the stored state at tau = {}", tau - 1));
    }
  }

  Vector g = grad_at_clean * std::sqrt(sub.alpha[0]);
  for (int tau = 1; tau <= sub.n; ++tau) {
    // x_{tau-1} = x_tau + dsigma eps(x_tau)  =>  g_tau = (I + dsigma J)^T g_{tau-1}
    g = tau == sub.n ? top_substep_adjoint(sub, g, model.backward(tapes[tau], g))
                     : g + sub.forward_step(tau) * model.backward(tapes[tau], g);
    check_adjoint(g, tau, "direct backprop");
  }
  if (stats) {
    stats->checkpoints_stored = traj.checkpoints_stored();
    stats->stage_records = 0;
    stats->peak_extra_vectors = 2;
    stats->stored_activations = held;
    stats->model_calls = static_cast<std::size_t>(sub.n);
  }
  return g;
}

Vector vanilla_adjoint_grad(const ScoreModel& model, const Vector& x_clean,
                            const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                            int n_back, AdjointStats* stats) {
  if (n_back < 1) throw std::invalid_argument("vanilla adjoint needs n_back >= 1");
  check_cotangent(model, x_clean);
  check_cotangent(model, grad_at_clean);
  const SubSchedule sub = make_sub_schedule(schedule, t, n_back);

  std::size_t tape_peak = 0;
  Vector x = x_clean / std::sqrt(sub.alpha[0]);
  Vector lambda = grad_at_clean * std::sqrt(sub.alpha[0]);
  for (int tau = 0; tau < n_back; ++tau) {
    // Both updates use the current re-integrated state at sigma_tau.
    const ForwardTape tape = model.record(x, sub.level(tau));
    tape_peak = std::max(tape_peak, tape_vectors(tape));
    lambda = lambda - sub.step[tau] * model.backward(tape, lambda);
    x = x + sub.step[tau] * tape.output;
    check_adjoint(lambda, tau + 1, "vanilla");
    if (!all_finite(x)) {
      throw DivergenceError(fmt::format("vanilla backward state diverged at tau = {}", tau + 1));
    }
  }
  if (stats) {
    stats->checkpoints_stored = 0;
    stats->stage_records = 0;
    stats->peak_extra_vectors = 3;  // state, lambda, one Jacobian product
    stats->stored_activations = tape_peak;
    stats->model_calls = static_cast<std::size_t>(n_back);
  }
  return lambda / std::sqrt(schedule.alpha(t));
}

NoiseLevel rk_stage_level(const SubSchedule& sub, int tau, double c) {
  if (c == 0.0) return sub.level(tau);
  if (c == 1.0) return sub.level(tau - 1);
  return NoiseLevel::from_sigma(sub.sigma[tau] + c * sub.forward_step(tau));
}

RkCheckpointTrajectory estimate_clean_rk(const ScoreModel& model, const NoiseSchedule& schedule,
                                         const Vector& x_t, int t, int n,
                                         const ButcherTableau& tableau) {
  tableau.validate();
  check_cotangent(model, x_t);
  const int s = tableau.stages;
  RkCheckpointTrajectory traj{make_sub_schedule(schedule, t, n), tableau, {}, {}, {}, {}, {}};
  const auto& sub = traj.sub;
  traj.states.resize(n + 1);
  traj.stage_points.resize(n + 1);
  traj.stage_slopes.resize(n + 1);
  traj.stage_levels.resize(n + 1);
  traj.states[n] = schedule.to_scaled(x_t, t);

  for (int tau = n; tau >= 1; --tau) {
    const double h = sub.forward_step(tau);
    const Vector& x = traj.states[tau];
    auto& points = traj.stage_points[tau];
    auto& slopes = traj.stage_slopes[tau];
    auto& levels = traj.stage_levels[tau];
    for (int i = 0; i < s; ++i) {
      Vector stage = x;
      if (i > 0) {
        Vector acc = Vector::Zero(x.size());
        for (int j = 0; j < i; ++j) acc += tableau.a(i, j) * slopes[j];
        stage = x + h * acc;
      }
      levels.push_back(rk_stage_level(sub, tau, tableau.c[i]));
      slopes.push_back(model.eps(stage, levels.back()));
      points.push_back(std::move(stage));
    }
    Vector acc = Vector::Zero(x.size());
    for (int i = 0; i < s; ++i) acc += tableau.b[i] * slopes[i];
    traj.states[tau - 1] = tau == n ? top_substep(sub, x_t, acc) : x + h * acc;
    if (!all_finite(traj.states[tau - 1])) {
      throw DivergenceError(
          fmt::format("RK clean estimate diverged at tau = {} (step t = {})", tau - 1, t));
    }
  }
  traj.clean_output = traj.states[0] * std::sqrt(sub.alpha[0]);
  return traj;
}

Vector symplectic_rk_grad(const ScoreModel& model, const RkCheckpointTrajectory& traj,
                          const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                          AdjointStats* stats) {
  const auto& tab = traj.tableau;
  tab.validate();
  check_trajectory(model, traj.sub, traj.states, schedule, t);
  check_cotangent(model, grad_at_clean);
  const auto& sub = traj.sub;
  const int s = tab.stages;
  for (int tau = 1; tau <= sub.n; ++tau) {
    if (traj.stage_points[tau].size() != static_cast<std::size_t>(s)) {
      throw std::invalid_argument("RK trajectory stage records do not match the tableau");
    }
  }

  std::size_t tape_peak = 0;
  Vector lambda = grad_at_clean * std::sqrt(sub.alpha[0]);
  std::vector<Vector> slopes(static_cast<std::size_t>(s));
  for (int tau = 1; tau <= sub.n; ++tau) {
    const double h = sub.forward_step(tau);
    // With an explicit forward tableau, A_ij - B_j vanishes for j <= i, so the
    // stages resolve in reverse order.
    for (int i = s - 1; i >= 0; --i) {
      Vector stage_adjoint = lambda;
      if (i + 1 < s) {
        Vector acc = Vector::Zero(lambda.size());
        for (int j = i + 1; j < s; ++j) acc += (tab.adj_a(i, j) - tab.adj_b[j]) * slopes[j];
        stage_adjoint = lambda + h * acc;
      }
      const ForwardTape tape =
          model.record(traj.stage_points[tau][i], traj.stage_levels[tau][i]);
      tape_peak = std::max(tape_peak, tape_vectors(tape));
      slopes[i] = -model.backward(tape, stage_adjoint);
    }
    Vector acc = Vector::Zero(lambda.size());
    for (int i = 0; i < s; ++i) acc += tab.adj_b[i] * slopes[i];
    lambda = tau == sub.n ? top_substep_adjoint(sub, lambda, -acc) : lambda - h * acc;
    check_adjoint(lambda, tau, "symplectic RK");
  }
  if (stats) {
    stats->checkpoints_stored = traj.states.size();
    stats->stage_records = static_cast<std::size_t>(sub.n) * static_cast<std::size_t>(s);
    stats->peak_extra_vectors = 2 + static_cast<std::size_t>(s);
    stats->stored_activations = tape_peak;
    stats->model_calls = static_cast<std::size_t>(sub.n) * static_cast<std::size_t>(s);
  }
  return lambda;
}

Vector direct_backprop_rk_grad(const ScoreModel& model, const RkCheckpointTrajectory& traj,
                               const Vector& grad_at_clean, const NoiseSchedule& schedule, int t,
                               AdjointStats* stats) {
  const auto& tab = traj.tableau;
  check_trajectory(model, traj.sub, traj.states, schedule, t);
  check_cotangent(model, grad_at_clean);
  const auto& sub = traj.sub;
  const int s = tab.stages;

  std::vector<std::vector<ForwardTape>> tapes(static_cast<std::size_t>(sub.n) + 1);
  std::size_t held = 0;
  for (int tau = 1; tau <= sub.n; ++tau) {
    for (int i = 0; i < s; ++i) {
      tapes[tau].push_back(model.record(traj.stage_points[tau][i], traj.stage_levels[tau][i]));
      held += tape_vectors(tapes[tau].back());
    }
  }

  Vector g = grad_at_clean * std::sqrt(sub.alpha[0]);
  for (int tau = 1; tau <= sub.n; ++tau) {
    const double h = sub.forward_step(tau);
    // Adjoints of the stage slopes k_i, seeded by x' = x + h sum b_i k_i.
    std::vector<Vector> slope_adj(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) slope_adj[i] = (h * tab.b[i]) * g;
    Vector next = g;
    for (int i = s - 1; i >= 0; --i) {
      // X_i = x + h sum_j a_ij k_j
      const Vector point_adj = model.backward(tapes[tau][i], slope_adj[i]);
      for (int j = 0; j < i; ++j) slope_adj[j] += (h * tab.a(i, j)) * point_adj;
      next += point_adj;
    }
    g = std::move(next);
    check_adjoint(g, tau, "direct RK backprop");
  }
  if (stats) {
    stats->checkpoints_stored = traj.states.size();
    stats->stage_records = static_cast<std::size_t>(sub.n) * static_cast<std::size_t>(s);
    stats->peak_extra_vectors = 2 + static_cast<std::size_t>(s);
    stats->stored_activations = held;
    stats->model_calls = static_cast<std::size_t>(sub.n) * static_cast<std::size_t>(s);
  }
  return g / std::sqrt(schedule.alpha(t));
}

std::vector<double> conservation_probe(const ScoreModel& model, const CheckpointTrajectory& traj,
                                       const Vector& v0, const Vector& lambda0) {
  check_cotangent(model, v0);
  check_cotangent(model, lambda0);
  const auto& sub = traj.sub;
  const int n = sub.n;
  if (traj.states.size() != static_cast<std::size_t>(n) + 1) {
    throw std::invalid_argument("trajectory does not hold n + 1 states");
  }

  std::vector<Vector> delta(static_cast<std::size_t>(n) + 1);
  delta[n] = v0;
  for (int tau = n; tau >= 1; --tau) {
    delta[tau - 1] =
        delta[tau] + sub.forward_step(tau) * model.jvp(traj.states[tau], sub.level(tau), delta[tau]);
  }
  std::vector<Vector> lambda(static_cast<std::size_t>(n) + 1);
  lambda[0] = lambda0;
  for (int tau = 0; tau < n; ++tau) {
    lambda[tau + 1] =
        lambda[tau] - sub.step[tau] * model.vjp(traj.states[tau + 1], sub.level(tau + 1), lambda[tau]);
  }
  std::vector<double> pairing(static_cast<std::size_t>(n) + 1);
  for (int tau = 0; tau <= n; ++tau) pairing[tau] = lambda[tau].dot(delta[tau]);
  return pairing;
}

}  // namespace sag
