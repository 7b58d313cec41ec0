// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/types.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <string>

namespace sag {

struct LossValue {
  double value = 0.0;
  Vector grad;
};

/// Differentiable loss on the clean estimate, L(x0, c) with its condition baked in.
class GuidanceLoss {
 public:
  virtual ~GuidanceLoss() = default;
  virtual std::string kind() const = 0;
  virtual LossValue evaluate(const Vector& x0) const = 0;
  double value(const Vector& x0) const { return evaluate(x0).value; }
  virtual nlohmann::json to_json() const = 0;
};

/// 1/2 ||x0 - c||^2
class L2TargetLoss final : public GuidanceLoss {
 public:
  explicit L2TargetLoss(Vector target);
  std::string kind() const override { return "l2"; }
  LossValue evaluate(const Vector& x0) const override;
  nlohmann::json to_json() const override;
  const Vector& target() const { return target_; }

 private:
  Vector target_;
};

/// ||G G^T - c||_F^2 where G is F x0 reshaped row-major into r x k.
class GramStyleLoss final : public GuidanceLoss {
 public:
  /// feature_map has r * k rows; target is r x r and symmetric.
  GramStyleLoss(Matrix feature_map, int rows, Matrix target);
  std::string kind() const override { return "gram"; }
  LossValue evaluate(const Vector& x0) const override;
  nlohmann::json to_json() const override;

  Matrix gram(const Vector& x0) const;

 private:
  Matrix features(const Vector& x0) const;

  Matrix feature_map_;
  int rows_;
  int cols_;
  Matrix target_;
};

std::unique_ptr<GuidanceLoss> loss_from_json(const nlohmann::json& j);

}  // namespace sag
