// SPDX-License-Identifier: Apache-2.0

#include "sag/tableau.hpp"

#include <fmt/format.h>

#include <cmath>
#include <utility>

namespace sag {

double ButcherTableau::condition_residual() const {
  double worst = 0.0;
  for (int i = 0; i < stages; ++i) {
    for (int j = 0; j < stages; ++j) {
      const double r = b[i] * adj_a(i, j) + adj_b[j] * a(j, i) - b[i] * adj_b[j];
      worst = std::max(worst, std::abs(r));
    }
  }
  return worst;
}

void ButcherTableau::validate(double tolerance) const {
  if (stages < 1) throw std::invalid_argument("tableau needs at least one stage");
  const Index s = stages;
  if (a.rows() != s || a.cols() != s || b.size() != s || c.size() != s || adj_a.rows() != s ||
      adj_a.cols() != s || adj_b.size() != s || adj_c.size() != s) {
    throw std::invalid_argument("tableau coefficient shapes do not match the stage count");
  }
  for (Index i = 0; i < s; ++i) {
    for (Index j = i; j < s; ++j) {
      if (a(i, j) != 0.0) {
        throw std::invalid_argument(fmt::format("tableau is not explicit: a[{}][{}] != 0", i, j));
      }
    }
    if (b[i] == 0.0) throw std::invalid_argument(fmt::format("tableau weight b[{}] is zero", i));
    if (adj_b[i] != b[i]) throw std::invalid_argument(fmt::format("adjoint B[{}] != b[{}]", i, i));
    if (adj_c[i] != c[i]) throw std::invalid_argument(fmt::format("adjoint C[{}] != c[{}]", i, i));
  }
  const double residual = condition_residual();
  if (residual > tolerance) {
    throw std::invalid_argument(
        fmt::format("adjoint tableau violates the symplectic condition (residual {})", residual));
  }
}

namespace {

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Matrix matrix_from(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return {};
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw std::invalid_argument("ragged tableau matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    }
  }
  return m;
}

Vector vector_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

std::vector<double> to_std(const Vector& v) { return {v.begin(), v.end()}; }

}  // namespace

nlohmann::json ButcherTableau::to_json() const {
  return {{"a", matrix_json(a)},         {"b", to_std(b)},         {"c", to_std(c)},
          {"A", matrix_json(adj_a)}, {"B", to_std(adj_b)}, {"C", to_std(adj_c)}};
}

ButcherTableau ButcherTableau::from_json(const nlohmann::json& j) {
  ButcherTableau tab;
  tab.a = matrix_from(j.at("a"));
  tab.b = vector_from(j.at("b"));
  tab.c = vector_from(j.at("c"));
  tab.stages = static_cast<int>(tab.b.size());
  if (j.contains("A")) {
    tab.adj_a = matrix_from(j.at("A"));
    tab.adj_b = vector_from(j.at("B"));
    tab.adj_c = vector_from(j.at("C"));
  } else {
    tab = conjugate_tableau(tab.a, tab.b, tab.c);
  }
  tab.validate();
  return tab;
}

ButcherTableau conjugate_tableau(Matrix a, Vector b, Vector c) {
  const Index s = b.size();
  if (s < 1 || a.rows() != s || a.cols() != s || c.size() != s) {
    throw std::invalid_argument("tableau coefficient shapes do not match");
  }
  Matrix adj_a(s, s);
  for (Index i = 0; i < s; ++i) {
    if (b[i] == 0.0) throw std::invalid_argument("conjugate tableau needs nonzero weights");
    for (Index j = 0; j < s; ++j) adj_a(i, j) = b[j] * (1.0 - a(j, i) / b[i]);
  }
  ButcherTableau tab{static_cast<int>(s), std::move(a), b, c, std::move(adj_a), b, c};
  return tab;
}

ButcherTableau euler_tableau() {
  return conjugate_tableau(Matrix::Zero(1, 1), Vector::Ones(1), Vector::Zero(1));
}

ButcherTableau heun_tableau() {
  Matrix a = Matrix::Zero(2, 2);
  a(1, 0) = 1.0;
  Vector b(2);
  b << 0.5, 0.5;
  Vector c(2);
  c << 0.0, 1.0;
  return conjugate_tableau(std::move(a), std::move(b), std::move(c));
}

}  // namespace sag
