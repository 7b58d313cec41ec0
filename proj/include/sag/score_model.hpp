// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/schedule.hpp"
#include "sag/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace sag {

/// Saved intermediates of one eps evaluation. `saved` is whatever the model
/// needs to replay its Jacobian; its size is what the stored-activation
/// accounting counts.
struct ForwardTape {
  Vector input;
  NoiseLevel level;
  Vector output;
  std::vector<Vector> saved;
};

/// Noise predictor written in the ODE coordinates: eps_bar(xbar, sigma) equals
/// eps_theta(x_t, t) for xbar = x_t / sqrt(alpha_t).
///
/// Implementations are immutable; every method is a pure function of its
/// arguments and may be called concurrently.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual Index dim() const = 0;
  virtual std::string kind() const = 0;

  virtual ForwardTape record(const Vector& xbar, NoiseLevel level) const = 0;
  /// v^T (d eps_bar / d xbar) replayed from a tape.
  virtual Vector backward(const ForwardTape& tape, const Vector& v) const = 0;
  /// (d eps_bar / d xbar) u
  virtual Vector jvp(const Vector& xbar, NoiseLevel level, const Vector& u) const = 0;

  virtual Vector eps(const Vector& xbar, NoiseLevel level) const {
    return record(xbar, level).output;
  }
  Vector vjp(const Vector& xbar, NoiseLevel level, const Vector& v) const {
    return backward(record(xbar, level), v);
  }

 protected:
  void check_dim(const Vector& v, const char* what) const;
};

/// eps_theta(x_t, t) evaluated in data coordinates.
Vector eps_at(const ScoreModel& model, const Vector& x, const NoiseSchedule& schedule, int t);

/// v^T (d eps_theta / d x_t), the transpose-Jacobian in data coordinates.
Vector vjp_at(const ScoreModel& model, const Vector& x, const NoiseSchedule& schedule, int t,
              const Vector& v);

/// Central-difference v^T J in data coordinates. Test oracle only.
Vector finite_diff_vjp(const ScoreModel& model, const Vector& x, const NoiseSchedule& schedule,
                       int t, const Vector& v, double h);

/// Central-difference v^T J in ODE coordinates at an arbitrary noise level.
Vector finite_diff_vjp_scaled(const ScoreModel& model, const Vector& xbar, NoiseLevel level,
                              const Vector& v, double h);

/// eps_bar(xbar, sigma) = A xbar + b, independent of sigma. A = 0 gives the
/// zero (or constant) model.
class AffineModel final : public ScoreModel {
 public:
  AffineModel(Matrix a, Vector b);
  static AffineModel zero(Index dim);

  Index dim() const override { return a_.rows(); }
  std::string kind() const override { return "affine"; }
  ForwardTape record(const Vector& xbar, NoiseLevel level) const override;
  Vector backward(const ForwardTape& tape, const Vector& v) const override;
  Vector jvp(const Vector& xbar, NoiseLevel level, const Vector& u) const override;

  const Matrix& matrix() const { return a_; }
  const Vector& offset() const { return b_; }

 private:
  Matrix a_;
  Vector b_;
};

}  // namespace sag
