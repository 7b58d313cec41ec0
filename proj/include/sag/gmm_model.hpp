// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/score_model.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace sag {

/// Bayes-optimal noise predictor for data drawn from a mixture of unit-covariance
/// Gaussians. Under x_t = sqrt(alpha) x_0 + sqrt(1 - alpha) z the marginal is the
/// mixture of N(sqrt(alpha) mu_k, I), so
///
///   eps(x) = sqrt(1 - alpha) * sum_k r_k(x) (x - sqrt(alpha) mu_k)
///
/// with r_k the posterior responsibilities. In ODE coordinates the Jacobian is
/// sqrt(alpha (1 - alpha)) (I - alpha Cov_r(xbar - mu)), which is symmetric.
class GmmModel final : public ScoreModel {
 public:
  /// Weights must be positive and sum to 1 within 1e-12; all means share a dimension.
  GmmModel(std::vector<double> weights, std::vector<Vector> means);

  Index dim() const override { return dim_; }
  std::string kind() const override { return "gmm"; }
  ForwardTape record(const Vector& xbar, NoiseLevel level) const override;
  Vector backward(const ForwardTape& tape, const Vector& v) const override;
  Vector jvp(const Vector& xbar, NoiseLevel level, const Vector& u) const override;

  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Vector>& means() const { return means_; }
  std::size_t num_components() const { return weights_.size(); }

  /// log p_t(x) of the noisy marginal at the given level, data coordinates.
  double log_density(const Vector& x, double alpha) const;

  /// Clean sample x_0 from the mixture.
  Vector sample_data(Rng& rng) const;
  /// x_t = sqrt(alpha) x_0 + sqrt(1 - alpha) z with x_0 from the mixture.
  Vector sample_marginal(double alpha, Rng& rng) const;

  nlohmann::json to_json() const;
  static GmmModel from_json(const nlohmann::json& j);

 private:
  Vector responsibilities(const Vector& xbar, double alpha) const;

  Index dim_ = 0;
  std::vector<double> weights_;
  std::vector<Vector> means_;
};

}  // namespace sag
