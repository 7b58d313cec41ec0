// SPDX-License-Identifier: Apache-2.0

#include "sag/gmm_model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <utility>

namespace sag {

GmmModel::GmmModel(std::vector<double> weights, std::vector<Vector> means)
    : weights_(std::move(weights)), means_(std::move(means)) {
  if (weights_.empty() || weights_.size() != means_.size()) {
    throw std::invalid_argument("GMM needs one weight per mean and at least one component");
  }
  dim_ = means_.front().size();
  if (dim_ == 0) throw std::invalid_argument("GMM means must be non-empty");
  for (const auto& mu : means_) {
    if (mu.size() != dim_) throw std::invalid_argument("GMM means differ in dimension");
  }
  for (double w : weights_) {
    if (!(w > 0.0)) throw std::invalid_argument("GMM weights must be positive");
  }
  const double total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument(fmt::format("GMM weights sum to {}, expected 1", total));
  }
}

Vector GmmModel::responsibilities(const Vector& xbar, double alpha) const {
  const auto k = static_cast<Index>(weights_.size());
  Vector logits(k);
  for (Index i = 0; i < k; ++i) {
    logits[i] = std::log(weights_[i]) - 0.5 * alpha * (xbar - means_[i]).squaredNorm();
  }
  const double top = logits.maxCoeff();
  Vector r = (logits.array() - top).exp();
  return r / r.sum();
}

ForwardTape GmmModel::record(const Vector& xbar, NoiseLevel level) const {
  check_dim(xbar, "state");
  const Vector r = responsibilities(xbar, level.alpha);
  Vector mean_offset = Vector::Zero(dim_);
  for (std::size_t i = 0; i < means_.size(); ++i) {
    mean_offset += r[static_cast<Index>(i)] * (xbar - means_[i]);
  }
  const double scale = std::sqrt(1.0 - level.alpha) * std::sqrt(level.alpha);
  ForwardTape tape{xbar, level, scale * mean_offset, {}};
  tape.saved.push_back(r);
  tape.saved.push_back(std::move(mean_offset));
  return tape;
}

Vector GmmModel::backward(const ForwardTape& tape, const Vector& v) const {
  check_dim(v, "cotangent");
  const Vector& r = tape.saved[0];
  const Vector& m = tape.saved[1];
  const double alpha = tape.level.alpha;
  Vector second = Vector::Zero(dim_);
  for (std::size_t i = 0; i < means_.size(); ++i) {
    const Vector d = tape.input - means_[i];
    second += r[static_cast<Index>(i)] * d.dot(v) * d;
  }
  second -= m.dot(v) * m;
  const double scale = std::sqrt(1.0 - alpha) * std::sqrt(alpha);
  return scale * (v - alpha * second);
}

Vector GmmModel::jvp(const Vector& xbar, NoiseLevel level, const Vector& u) const {
  // Jacobian is symmetric.
  return vjp(xbar, level, u);
}

double GmmModel::log_density(const Vector& x, double alpha) const {
  check_dim(x, "state");
  const auto k = static_cast<Index>(weights_.size());
  Vector logits(k);
  for (Index i = 0; i < k; ++i) {
    logits[i] =
        std::log(weights_[i]) - 0.5 * (x - std::sqrt(alpha) * means_[i]).squaredNorm();
  }
  const double top = logits.maxCoeff();
  return top + std::log((logits.array() - top).exp().sum()) -
         0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi);
}

Vector GmmModel::sample_data(Rng& rng) const {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  std::size_t pick = weights_.size() - 1;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    acc += weights_[i];
    if (u < acc) {
      pick = i;
      break;
    }
  }
  return means_[pick] + standard_normal(dim_, rng);
}

Vector GmmModel::sample_marginal(double alpha, Rng& rng) const {
  const Vector x0 = sample_data(rng);
  return std::sqrt(alpha) * x0 + std::sqrt(1.0 - alpha) * standard_normal(dim_, rng);
}

nlohmann::json GmmModel::to_json() const {
  nlohmann::json means = nlohmann::json::array();
  for (const auto& mu : means_) means.push_back(std::vector<double>(mu.begin(), mu.end()));
  return {{"weights", weights_}, {"means", means}};
}

GmmModel GmmModel::from_json(const nlohmann::json& j) {
  auto weights = j.at("weights").get<std::vector<double>>();
  std::vector<Vector> means;
  for (const auto& row : j.at("means")) {
    const auto values = row.get<std::vector<double>>();
    means.push_back(Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size())));
  }
  return GmmModel(std::move(weights), std::move(means));
}

}  // namespace sag
