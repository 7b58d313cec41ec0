// SPDX-License-Identifier: Apache-2.0

#include "sag/guidance.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>

namespace sag {

int StepSchedule::at(int t) const {
  for (const auto& piece : pieces) {
    if (t >= piece.from && t <= piece.to) return piece.value;
  }
  return fallback;
}

namespace {

nlohmann::json step_schedule_json(const StepSchedule& s) {
  if (s.pieces.empty()) return s.fallback;
  nlohmann::json pieces = nlohmann::json::array();
  for (const auto& p : s.pieces) pieces.push_back({{"from", p.from}, {"to", p.to}, {"value", p.value}});
  return {{"default", s.fallback}, {"pieces", pieces}};
}

StepSchedule step_schedule_from(const nlohmann::json& j, const char* key) {
  if (j.is_number_integer()) return StepSchedule::constant(j.get<int>());
  if (!j.is_object()) {
    throw ConfigError(fmt::format("guidance.{} must be an integer or a piecewise object", key));
  }
  StepSchedule s;
  s.fallback = j.value("default", 1);
  for (const auto& p : j.value("pieces", nlohmann::json::array())) {
    int from = p.at("from").get<int>();
    int to = p.at("to").get<int>();
    if (from > to) std::swap(from, to);
    s.pieces.push_back({from, to, p.at("value").get<int>()});
  }
  return s;
}

void check_positive(const StepSchedule& s, const char* key) {
  if (s.fallback < 1) throw ConfigError(fmt::format("guidance.{} must be >= 1", key));
  for (const auto& p : s.pieces) {
    if (p.value < 1) throw ConfigError(fmt::format("guidance.{} must be >= 1 everywhere", key));
  }
}

}  // namespace

void GuidanceConfig::validate(int num_steps) const {
  if (!(0 < window_lo && window_lo < window_hi && window_hi < num_steps)) {
    throw ConfigError(fmt::format("guidance window [{}, {}] must satisfy 0 < lo < hi < T = {}",
                                  window_lo, window_hi, num_steps));
  }
  if (!(rho >= 0.0) || !std::isfinite(rho)) {
    throw ConfigError("guidance strength rho must be finite and non-negative");
  }
  check_positive(repeats, "repeats");
  check_positive(n_schedule, "n");
}

nlohmann::json GuidanceConfig::to_json() const {
  return {{"window", {window_lo, window_hi}},
          {"rho", rho},
          {"repeats", step_schedule_json(repeats)},
          {"n", step_schedule_json(n_schedule)},
          {"grad_normalize", grad_normalize},
          {"record_wall_time", record_wall_time}};
}

GuidanceConfig GuidanceConfig::from_json(const nlohmann::json& j) {
  GuidanceConfig cfg;
  try {
    if (j.contains("window")) {
      const auto w = j.at("window").get<std::vector<int>>();
      if (w.size() != 2) throw ConfigError("guidance.window must hold two step indices");
      cfg.window_lo = std::min(w[0], w[1]);
      cfg.window_hi = std::max(w[0], w[1]);
    }
    cfg.rho = j.value("rho", 0.0);
    if (j.contains("repeats")) cfg.repeats = step_schedule_from(j.at("repeats"), "repeats");
    if (j.contains("n")) cfg.n_schedule = step_schedule_from(j.at("n"), "n");
    cfg.grad_normalize = j.value("grad_normalize", false);
    cfg.record_wall_time = j.value("record_wall_time", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("guidance config: {}", e.what()));
  }
  return cfg;
}

nlohmann::json SampleRecord::to_json() const {
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& s : steps) {
    steps_json.push_back({{"t", s.t},
                          {"repeat", s.repeat},
                          {"n", s.n},
                          {"loss", s.loss},
                          {"grad_norm", s.grad_norm}});
  }
  return {{"seed", seed},
          {"x0", std::vector<double>(x0.begin(), x0.end())},
          {"final_loss", final_loss},
          {"steps_guided", steps_guided()},
          {"checkpoints_stored", checkpoints_stored},
          {"peak_checkpoints", peak_checkpoints},
          {"wall_time_ns", wall_time_ns},
          {"steps", steps_json}};
}

Vector ddim_step(const ScoreModel& model, const NoiseSchedule& schedule, const Vector& x_t,
                 int t) {
  if (t < 1 || t > schedule.num_steps()) {
    throw std::out_of_range(fmt::format("DDIM step {} outside [1, {}]", t, schedule.num_steps()));
  }
  const double alpha = schedule.alpha(t);
  const double alpha_prev = schedule.alpha(t - 1);
  const Vector eps = eps_at(model, x_t, schedule, t);
  const Vector x0_hat = (x_t - std::sqrt(1.0 - alpha) * eps) / std::sqrt(alpha);
  return std::sqrt(alpha_prev) * x0_hat + std::sqrt(1.0 - alpha_prev) * eps;
}

Vector time_travel_renoise(const Vector& x_prev, const NoiseSchedule& schedule, int t,
                           const Vector& noise) {
  if (t < 1 || t > schedule.num_steps()) {
    throw std::out_of_range(fmt::format("renoise step {} outside [1, {}]", t, schedule.num_steps()));
  }
  const double alpha = schedule.alpha(t);
  const double alpha_prev = schedule.alpha(t - 1);
  return (std::sqrt(alpha) / std::sqrt(alpha_prev)) * x_prev +
         (std::sqrt(alpha_prev - alpha) / std::sqrt(alpha_prev)) * noise;
}

Vector time_travel_renoise(const Vector& x_prev, const NoiseSchedule& schedule, int t, Rng& rng) {
  return time_travel_renoise(x_prev, schedule, t, standard_normal(x_prev.size(), rng));
}

Vector ddim_sample(const ScoreModel& model, const NoiseSchedule& schedule, std::uint64_t seed) {
  Rng rng(seed);
  Vector x = standard_normal(model.dim(), rng);
  for (int t = schedule.num_steps(); t >= 1; --t) x = ddim_step(model, schedule, x, t);
  return x;
}

GuidanceGradient guidance_gradient(const ScoreModel& model, const NoiseSchedule& schedule,
                                   const GuidanceLoss& loss, const Vector& x_t, int t, int n) {
  const CheckpointTrajectory traj = estimate_clean(model, schedule, x_t, t, n);
  LossValue lv = loss.evaluate(traj.clean_output);
  Vector grad = symplectic_euler_grad(model, traj, lv.grad, schedule, t);
  return {lv.value, std::move(grad), traj.checkpoints_stored()};
}

SampleRecord sag_sample(const ScoreModel& model, const NoiseSchedule& schedule,
                        const GuidanceLoss& loss, const GuidanceConfig& config,
                        std::uint64_t seed) {
  config.validate(schedule.num_steps());
  using Clock = std::chrono::steady_clock;

  SampleRecord record;
  record.seed = seed;
  Rng rng(seed);
  Vector x = standard_normal(model.dim(), rng);
  Clock::duration guided_time{};

  for (int t = schedule.num_steps(); t >= 1; --t) {
    const int repeats = config.repeats.at(t);
    Vector x_prev;
    for (int i = repeats; i >= 1; --i) {
      x_prev = ddim_step(model, schedule, x, t);
      if (config.guided(t)) {
        const auto start = Clock::now();
        const int n = config.n_schedule.at(t);
        GuidanceGradient gg = guidance_gradient(model, schedule, loss, x, t, n);
        const double norm = gg.grad.norm();
        if (config.grad_normalize && norm > 0.0) gg.grad /= norm;
        // The gradient is taken w.r.t. x_t and applied to x_{t-1}.
        x_prev = x_prev - config.rho_at(t) * gg.grad;
        if (config.record_wall_time) guided_time += Clock::now() - start;
        record.steps.push_back({t, i, n, gg.loss, norm});
        record.checkpoints_stored += gg.checkpoints_stored;
        record.peak_checkpoints = std::max(record.peak_checkpoints, gg.checkpoints_stored);
      }
      if (!all_finite(x_prev)) {
        throw DivergenceError(fmt::format("guided sample diverged at t = {} (seed {})", t, seed));
      }
      // Renoise between repeats only; the last repeat's x_{t-1} moves on.
      if (i > 1) x = time_travel_renoise(x_prev, schedule, t, rng);
    }
    x = std::move(x_prev);
  }

  record.x0 = x;
  record.final_loss = loss.value(x);
  record.wall_time_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(guided_time).count();
  return record;
}

}  // namespace sag
