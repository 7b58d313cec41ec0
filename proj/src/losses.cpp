// SPDX-License-Identifier: Apache-2.0

#include "sag/losses.hpp"

#include <fmt/format.h>

#include <utility>

namespace sag {

L2TargetLoss::L2TargetLoss(Vector target) : target_(std::move(target)) {
  if (target_.size() == 0) throw std::invalid_argument("l2 target is empty");
}

LossValue L2TargetLoss::evaluate(const Vector& x0) const {
  if (x0.size() != target_.size()) {
    throw std::invalid_argument(
        fmt::format("l2 loss: state dimension {} vs target {}", x0.size(), target_.size()));
  }
  Vector diff = x0 - target_;
  return {0.5 * diff.squaredNorm(), std::move(diff)};
}

nlohmann::json L2TargetLoss::to_json() const {
  return {{"type", "l2"}, {"target", std::vector<double>(target_.begin(), target_.end())}};
}

GramStyleLoss::GramStyleLoss(Matrix feature_map, int rows, Matrix target)
    : feature_map_(std::move(feature_map)), rows_(rows), cols_(0), target_(std::move(target)) {
  if (rows_ <= 0 || feature_map_.rows() == 0 || feature_map_.rows() % rows_ != 0) {
    throw std::invalid_argument(fmt::format(
        "gram loss: feature map with {} rows cannot be split into {} rows", feature_map_.rows(),
        rows_));
  }
  cols_ = static_cast<int>(feature_map_.rows() / rows_);
  if (target_.rows() != rows_ || target_.cols() != rows_) {
    throw std::invalid_argument(fmt::format("gram loss: target must be {} x {}", rows_, rows_));
  }
  if ((target_ - target_.transpose()).cwiseAbs().maxCoeff() >
      1e-12 * (1.0 + target_.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("gram loss: target must be symmetric");
  }
}

Matrix GramStyleLoss::features(const Vector& x0) const {
  if (x0.size() != feature_map_.cols()) {
    throw std::invalid_argument(fmt::format("gram loss: state dimension {} vs feature map {}",
                                            x0.size(), feature_map_.cols()));
  }
  const Vector flat = feature_map_ * x0;
  Matrix g(rows_, cols_);
  for (int r = 0; r < rows_; ++r) {
    for (int c = 0; c < cols_; ++c) g(r, c) = flat[r * cols_ + c];
  }
  return g;
}

Matrix GramStyleLoss::gram(const Vector& x0) const {
  const Matrix g = features(x0);
  return g * g.transpose();
}

LossValue GramStyleLoss::evaluate(const Vector& x0) const {
  const Matrix g = features(x0);
  const Matrix residual = g * g.transpose() - target_;
  // d/dG ||G G^T - C||^2 = (E + E^T) G with E = 2 (G G^T - C)
  const Matrix dg = 2.0 * (residual + residual.transpose()) * g;
  Vector flat(rows_ * cols_);
  for (int r = 0; r < rows_; ++r) {
    for (int c = 0; c < cols_; ++c) flat[r * cols_ + c] = dg(r, c);
  }
  return {residual.squaredNorm(), feature_map_.transpose() * flat};
}

nlohmann::json GramStyleLoss::to_json() const {
  auto rows_of = [](const Matrix& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
      out.push_back(row);
    }
    return out;
  };
  return {{"type", "gram"},
          {"rows", rows_},
          {"feature_map", rows_of(feature_map_)},
          {"target", rows_of(target_)}};
}

namespace {

Matrix matrix_from(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw std::invalid_argument("empty matrix");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw std::invalid_argument("ragged matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    }
  }
  return m;
}

}  // namespace

std::unique_ptr<GuidanceLoss> loss_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "l2") {
    const auto target = j.at("target").get<std::vector<double>>();
    return std::make_unique<L2TargetLoss>(
        Eigen::Map<const Vector>(target.data(), static_cast<Index>(target.size())));
  }
  if (type == "gram") {
    return std::make_unique<GramStyleLoss>(matrix_from(j.at("feature_map")),
                                           j.at("rows").get<int>(), matrix_from(j.at("target")));
  }
  throw std::invalid_argument(fmt::format("unknown loss type \"{}\"", type));
}

}  // namespace sag
