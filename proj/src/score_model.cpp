// SPDX-License-Identifier: Apache-2.0

#include "sag/score_model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <utility>

namespace sag {

void ScoreModel::check_dim(const Vector& v, const char* what) const {
  if (v.size() != dim()) {
    throw std::invalid_argument(
        fmt::format("{} has dimension {} but model expects {}", what, v.size(), dim()));
  }
}

Vector eps_at(const ScoreModel& model, const Vector& x, const NoiseSchedule& schedule, int t) {
  return model.eps(schedule.to_scaled(x, t), schedule.level(t));
}

Vector vjp_at(const ScoreModel& model, const Vector& x, const NoiseSchedule& schedule, int t,
              const Vector& v) {
  return model.vjp(schedule.to_scaled(x, t), schedule.level(t), v) / std::sqrt(schedule.alpha(t));
}

Vector finite_diff_vjp(const ScoreModel& model, const Vector& x, const NoiseSchedule& schedule,
                       int t, const Vector& v, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  Vector out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector plus = x;
    Vector minus = x;
    plus[i] += h;
    minus[i] -= h;
    out[i] = (v.dot(eps_at(model, plus, schedule, t)) - v.dot(eps_at(model, minus, schedule, t))) /
             (2.0 * h);
  }
  return out;
}

Vector finite_diff_vjp_scaled(const ScoreModel& model, const Vector& xbar, NoiseLevel level,
                              const Vector& v, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  Vector out(xbar.size());
  for (Index i = 0; i < xbar.size(); ++i) {
    Vector plus = xbar;
    Vector minus = xbar;
    plus[i] += h;
    minus[i] -= h;
    out[i] = (v.dot(model.eps(plus, level)) - v.dot(model.eps(minus, level))) / (2.0 * h);
  }
  return out;
}

AffineModel::AffineModel(Matrix a, Vector b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() != a_.cols() || a_.rows() != b_.size() || a_.rows() == 0) {
    throw std::invalid_argument("affine model needs square A and matching b");
  }
}

AffineModel AffineModel::zero(Index dim) {
  return AffineModel(Matrix::Zero(dim, dim), Vector::Zero(dim));
}

ForwardTape AffineModel::record(const Vector& xbar, NoiseLevel level) const {
  check_dim(xbar, "state");
  return {xbar, level, a_ * xbar + b_, {}};
}

Vector AffineModel::backward(const ForwardTape& tape, const Vector& v) const {
  check_dim(v, "cotangent");
  (void)tape;
  return a_.transpose() * v;
}

Vector AffineModel::jvp(const Vector& xbar, NoiseLevel, const Vector& u) const {
  check_dim(xbar, "state");
  check_dim(u, "tangent");
  return a_ * u;
}

}  // namespace sag
