// SPDX-License-Identifier: Apache-2.0

#include "sag/schedule.hpp"

#include <fmt/format.h>

#include <cmath>
#include <utility>

namespace sag {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha) : alpha_(std::move(alpha)) {
  if (alpha_.size() < 2) throw std::invalid_argument("schedule needs at least one step");
  if (alpha_[0] != 1.0) throw std::invalid_argument("schedule must have alpha[0] == 1");
  for (std::size_t t = 1; t < alpha_.size(); ++t) {
    if (!std::isfinite(alpha_[t]) || alpha_[t] <= 0.0) {
      throw std::invalid_argument(fmt::format("alpha[{}] = {} is not positive", t, alpha_[t]));
    }
    if (!(alpha_[t] < alpha_[t - 1])) {
      throw std::invalid_argument(fmt::format("alpha not strictly decreasing at t = {}", t));
    }
  }
  sigma_.resize(alpha_.size());
  for (std::size_t t = 0; t < alpha_.size(); ++t) {
    sigma_[t] = std::sqrt(1.0 - alpha_[t]) / std::sqrt(alpha_[t]);
  }
  for (std::size_t t = 1; t < sigma_.size(); ++t) {
    if (!(sigma_[t] > sigma_[t - 1])) {
      throw std::invalid_argument(fmt::format("sigma not strictly increasing at t = {}", t));
    }
  }
}

void NoiseSchedule::check_step(int t) const {
  if (t < 0 || t > num_steps()) {
    throw std::out_of_range(fmt::format("step {} outside [0, {}]", t, num_steps()));
  }
}

double NoiseSchedule::alpha(int t) const {
  check_step(t);
  return alpha_[t];
}

double NoiseSchedule::sigma(int t) const {
  check_step(t);
  return sigma_[t];
}

NoiseLevel NoiseSchedule::level(int t) const {
  check_step(t);
  return {alpha_[t], sigma_[t]};
}

double NoiseSchedule::alpha_at(double u) const {
  const double top = num_steps();
  if (!(u >= 0.0 && u <= top)) {
    throw std::out_of_range(fmt::format("continuous step {} outside [0, {}]", u, top));
  }
  const double lo = std::floor(u);
  const auto i = static_cast<std::size_t>(lo);
  const double frac = u - lo;
  if (frac == 0.0) return alpha_[i];
  const double log_a = std::log(alpha_[i]);
  const double log_b = std::log(alpha_[i + 1]);
  return std::exp(log_a + frac * (log_b - log_a));
}

Vector NoiseSchedule::to_scaled(const Vector& x, int t) const {
  check_step(t);
  return x / std::sqrt(alpha_[t]);
}

Vector NoiseSchedule::from_scaled(const Vector& xbar, int t) const {
  check_step(t);
  return xbar * std::sqrt(alpha_[t]);
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"T", num_steps()}, {"alpha", alpha_}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("T") || !j.contains("alpha")) {
    throw std::invalid_argument("schedule JSON needs \"T\" and \"alpha\"");
  }
  const int steps = j.at("T").get<int>();
  auto alpha = j.at("alpha").get<std::vector<double>>();
  if (static_cast<int>(alpha.size()) != steps + 1) {
    throw std::invalid_argument(
        fmt::format("schedule JSON has T = {} but {} alpha values", steps, alpha.size()));
  }
  return NoiseSchedule(std::move(alpha));
}

NoiseSchedule build_linear_schedule(int num_steps, double beta_min, double beta_max) {
  if (num_steps < 2) throw std::invalid_argument("linear schedule needs T >= 2");
  auto in_unit = [](double b) { return b > 0.0 && b < 1.0; };
  if (!in_unit(beta_min) || !in_unit(beta_max)) {
    throw std::invalid_argument("betas must lie in (0, 1)");
  }
  if (beta_min > beta_max) throw std::invalid_argument("beta_min must not exceed beta_max");

  std::vector<double> alpha(num_steps + 1);
  alpha[0] = 1.0;
  double prod = 1.0;
  for (int s = 1; s <= num_steps; ++s) {
    const double beta =
        beta_min + (beta_max - beta_min) * static_cast<double>(s - 1) / (num_steps - 1);
    prod *= 1.0 - beta;
    alpha[s] = prod;
  }
  if (!(alpha[num_steps] > 0.0)) throw std::invalid_argument("schedule underflows to alpha = 0");
  return NoiseSchedule(std::move(alpha));
}

}  // namespace sag
