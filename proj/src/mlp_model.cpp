// SPDX-License-Identifier: Apache-2.0

#include "sag/mlp_model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <utility>

namespace sag {

namespace {

Index input_width(const std::vector<int>& widths, std::size_t layer) {
  // The first layer also sees sigma.
  return layer == 0 ? widths[0] + 1 : widths[layer];
}

}  // namespace

MlpModel::MlpModel(std::vector<int> widths, std::vector<Layer> layers, std::uint64_t seed)
    : widths_(std::move(widths)), layers_(std::move(layers)), seed_(seed) {
  if (widths_.size() < 2) throw std::invalid_argument("MLP needs at least two widths");
  for (int w : widths_) {
    if (w <= 0) throw std::invalid_argument("MLP widths must be positive");
  }
  if (widths_.front() != widths_.back()) {
    throw std::invalid_argument("MLP output width must equal its input width");
  }
  if (layers_.size() != widths_.size() - 1) {
    throw std::invalid_argument(fmt::format("MLP with {} widths needs {} layers, got {}",
                                            widths_.size(), widths_.size() - 1, layers_.size()));
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weight.rows() != widths_[l + 1] || layer.weight.cols() != input_width(widths_, l) ||
        layer.bias.size() != widths_[l + 1]) {
      throw std::invalid_argument(fmt::format("MLP layer {} has the wrong shape", l));
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw std::invalid_argument(fmt::format("MLP layer {} has non-finite weights", l));
    }
  }
}

MlpModel MlpModel::random(std::vector<int> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("MLP needs at least two widths");
  Rng rng(seed);
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Index fan_in = input_width(widths, l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    Layer layer{Matrix(widths[l + 1], fan_in), Vector(widths[l + 1])};
    for (Index r = 0; r < layer.weight.rows(); ++r) {
      for (Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = uniform(rng);
    }
    for (Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = uniform(rng);
    layers.push_back(std::move(layer));
  }
  return MlpModel(std::move(widths), std::move(layers), seed);
}

Vector MlpModel::features(const Vector& xbar, NoiseLevel level) const {
  Vector f(dim() + 1);
  f.head(dim()) = std::sqrt(level.alpha) * xbar;
  f[dim()] = level.sigma;
  return f;
}

ForwardTape MlpModel::record(const Vector& xbar, NoiseLevel level) const {
  check_dim(xbar, "state");
  ForwardTape tape{xbar, level, {}, {}};
  tape.saved.reserve(layers_.size() + 1);
  tape.saved.push_back(features(xbar, level));
  Vector h = tape.saved.back();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vector z = layers_[l].weight * h + layers_[l].bias;
    if (l + 1 < layers_.size()) h = z.array().tanh();
    tape.saved.push_back(std::move(z));
  }
  tape.output = tape.saved.back();
  return tape;
}

Vector MlpModel::backward(const ForwardTape& tape, const Vector& v) const {
  check_dim(v, "cotangent");
  if (tape.saved.size() != layers_.size() + 1) {
    throw std::invalid_argument("tape does not belong to this MLP");
  }
  Vector g = v;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      const auto th = tape.saved[l + 1].array().tanh();
      g = (g.array() * (1.0 - th * th)).matrix();
    }
    g = layers_[l].weight.transpose() * g;
  }
  return std::sqrt(tape.level.alpha) * g.head(dim());
}

Vector MlpModel::jvp(const Vector& xbar, NoiseLevel level, const Vector& u) const {
  check_dim(xbar, "state");
  check_dim(u, "tangent");
  Vector h = features(xbar, level);
  Vector dh = Vector::Zero(dim() + 1);
  dh.head(dim()) = std::sqrt(level.alpha) * u;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vector z = layers_[l].weight * h + layers_[l].bias;
    Vector dz = layers_[l].weight * dh;
    if (l + 1 < layers_.size()) {
      h = z.array().tanh();
      dh = (dz.array() * (1.0 - h.array() * h.array())).matrix();
    } else {
      dh = std::move(dz);
    }
  }
  return dh;
}

nlohmann::json MlpModel::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : layers_) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < layer.weight.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(layer.weight.cols()));
      for (Index c = 0; c < layer.weight.cols(); ++c) row[c] = layer.weight(r, c);
      rows.push_back(row);
    }
    layers.push_back({{"W", rows}, {"b", std::vector<double>(layer.bias.begin(), layer.bias.end())}});
  }
  return {{"widths", widths_}, {"layers", layers}, {"seed", seed_}};
}

MlpModel MlpModel::from_json(const nlohmann::json& j) {
  auto widths = j.at("widths").get<std::vector<int>>();
  std::vector<Layer> layers;
  for (const auto& entry : j.at("layers")) {
    const auto rows = entry.at("W").get<std::vector<std::vector<double>>>();
    const auto bias = entry.at("b").get<std::vector<double>>();
    if (rows.empty()) throw std::invalid_argument("MLP layer has no rows");
    Layer layer{Matrix(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size())),
                Eigen::Map<const Vector>(bias.data(), static_cast<Index>(bias.size()))};
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows[0].size()) throw std::invalid_argument("ragged MLP weight");
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        layer.weight(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
      }
    }
    layers.push_back(std::move(layer));
  }
  return MlpModel(std::move(widths), std::move(layers), j.value("seed", std::uint64_t{0}));
}

}  // namespace sag
