// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/score_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

namespace sag {

/// Dense tanh network used as a nonlinear noise predictor.
///
/// Input features are [x, sigma] with x = sqrt(alpha) * xbar the data-space
/// state, so the first layer takes d + 1 inputs. Hidden layers use tanh; the
/// output layer is linear. widths = {d, h_1, ..., d}.
class MlpModel final : public ScoreModel {
 public:
  struct Layer {
    Matrix weight;  // out x in
    Vector bias;
  };

  MlpModel(std::vector<int> widths, std::vector<Layer> layers, std::uint64_t seed = 0);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static MlpModel random(std::vector<int> widths, std::uint64_t seed);

  Index dim() const override { return widths_.front(); }
  std::string kind() const override { return "mlp"; }
  ForwardTape record(const Vector& xbar, NoiseLevel level) const override;
  Vector backward(const ForwardTape& tape, const Vector& v) const override;
  Vector jvp(const Vector& xbar, NoiseLevel level, const Vector& u) const override;

  const std::vector<int>& widths() const { return widths_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::uint64_t seed() const { return seed_; }

  nlohmann::json to_json() const;
  static MlpModel from_json(const nlohmann::json& j);

 private:
  Vector features(const Vector& xbar, NoiseLevel level) const;

  std::vector<int> widths_;
  std::vector<Layer> layers_;
  std::uint64_t seed_ = 0;
};

}  // namespace sag
