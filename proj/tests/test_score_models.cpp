// SPDX-License-Identifier: Apache-2.0

#include "sag/gmm_model.hpp"
#include "sag/mlp_model.hpp"
#include "sag/score_model.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cstring>

using namespace sag;
using sag::testing::rel_err;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// -sqrt(1 - alpha) * d/dx log p_t(x) by central differences.
Vector numeric_score_eps(const GmmModel& m, const Vector& x, double alpha, double h = 1e-5) {
  Vector grad(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector p = x, q = x;
    p[i] += h;
    q[i] -= h;
    grad[i] = (m.log_density(p, alpha) - m.log_density(q, alpha)) / (2 * h);
  }
  return -std::sqrt(1.0 - alpha) * grad;
}

bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("single centred Gaussian has an affine noise predictor") {
  const GmmModel m({1.0}, {vec({0.0})});
  const NoiseSchedule s({1.0, 0.75});
  const Vector eps = eps_at(m, vec({2.0}), s, 1);
  CHECK(eps[0] == doctest::Approx(1.0).epsilon(1e-14));
  const Vector jv = vjp_at(m, vec({2.0}), s, 1, vec({3.0}));
  CHECK(jv[0] == doctest::Approx(3.0 * std::sqrt(0.25)).epsilon(1e-14));
  CHECK(vjp_at(m, vec({2.0}), s, 1, vec({0.0}))[0] == 0.0);
}

TEST_CASE("GMM noise prediction vanishes at the mode of a single component") {
  const Vector mu = vec({1.0, -2.0, 0.5});
  const GmmModel m({1.0}, {mu});
  const auto s = testing::default_schedule();
  const int t = 20;
  const Vector x = std::sqrt(s.alpha(t)) * mu;
  CHECK(eps_at(m, x, s, t).norm() <= 1e-14);
}

TEST_CASE("GMM eps is zero at t = 0") {
  const GmmModel m({0.5, 0.5}, {vec({-1.0}), vec({1.0})});
  const auto s = testing::default_schedule();
  CHECK(eps_at(m, vec({0.3}), s, 0).norm() == 0.0);
}

TEST_CASE("two-component GMM matches the numeric score of its density") {
  const GmmModel m({0.5, 0.5}, {vec({-1.0}), vec({1.0})});
  const NoiseSchedule s({1.0, 0.5});
  const Vector x = vec({0.3});
  CHECK(rel_err(eps_at(m, x, s, 1), numeric_score_eps(m, x, 0.5)) <= 1e-6);
}

TEST_CASE("GMM score consistency on random mixtures") {
  sag::Rng rng(3);
  const auto s = testing::default_schedule();
  std::uniform_int_distribution<int> step(1, s.num_steps());
  for (int k = 1; k <= 3; ++k) {
    for (int d = 1; d <= 4; ++d) {
      const GmmModel m = testing::random_gmm(d, k, rng);
      for (int trial = 0; trial < 10; ++trial) {
        const int t = step(rng);
        const Vector x = m.sample_marginal(s.alpha(t), rng);
        CHECK(rel_err(eps_at(m, x, s, t), numeric_score_eps(m, x, s.alpha(t)), 1e-8) <= 1e-6);
      }
    }
  }
}

TEST_CASE("finite-difference VJP") {
  const auto s = testing::default_schedule();
  SUBCASE("exact on an affine model") {
    Matrix a(2, 2);
    a << 0.3, -0.2, 0.1, 0.5;
    const AffineModel m(a, vec({0.1, -0.4}));
    const Vector x = vec({1.0, 2.0});
    const Vector v = vec({0.7, -1.3});
    const Vector fd = finite_diff_vjp(m, x, s, 10, v, 1e-3);
    const Vector exact = vjp_at(m, x, s, 10, v);
    CHECK((fd - exact).norm() <= 1e-12 * exact.norm());
  }
  SUBCASE("second-order convergence on a GMM") {
    const GmmModel m({0.5, 0.5}, {vec({-1.0, 0.5}), vec({1.0, -0.5})});
    const Vector x = vec({0.3, 0.1});
    const Vector v = vec({1.0, -2.0});
    const int t = 25;
    const Vector exact = vjp_at(m, x, s, t, v);
    const double e1 = (finite_diff_vjp(m, x, s, t, v, 1e-2) - exact).norm();
    const double e2 = (finite_diff_vjp(m, x, s, t, v, 5e-3) - exact).norm();
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.05));
  }
  SUBCASE("rejects a zero step") {
    const auto m = AffineModel::zero(2);
    CHECK_THROWS_AS(finite_diff_vjp(m, vec({1.0, 2.0}), s, 3, vec({1.0, 1.0}), 0.0),
                    std::invalid_argument);
  }
}

TEST_CASE("dead MLP outputs its last bias and has zero Jacobian") {
  auto base = testing::random_mlp(3, 5);
  std::vector<MlpModel::Layer> layers = base.layers();
  for (auto& layer : layers) layer.weight.setZero();
  const MlpModel m(base.widths(), layers);
  const auto s = testing::default_schedule();
  const Vector x = vec({0.5, -1.0, 2.0});
  CHECK(eps_at(m, x, s, 17) == layers.back().bias);
  CHECK(vjp_at(m, x, s, 17, vec({1.0, 2.0, 3.0})).norm() == 0.0);
}

TEST_CASE("single linear layer MLP has vjp W_x^T v") {
  Matrix w(2, 3);
  w << 0.5, -1.0, 2.0, 0.25, 3.0, -0.75;
  const MlpModel m({2, 2}, {{w, vec({0.1, 0.2})}});
  const auto s = testing::default_schedule();
  const Vector v = vec({1.5, -2.0});
  const Vector expected = w.leftCols(2).transpose() * v;
  CHECK(rel_err(vjp_at(m, vec({0.3, -0.6}), s, 30, v), expected) <= 1e-15);
}

TEST_CASE("MLP vjp matches central differences") {
  const auto m = testing::random_mlp(3, 42, 8, 2);
  const auto s = testing::default_schedule();
  sag::Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = testing::random_vector(3, rng);
    const Vector v = testing::random_vector(3, rng);
    const double h = 1e-5 * (1.0 + x.cwiseAbs().maxCoeff());
    CHECK(rel_err(vjp_at(m, x, s, 1 + trial * 2, v), finite_diff_vjp(m, x, s, 1 + trial * 2, v, h)) <=
          1e-5);
  }
}

TEST_CASE("MLP shape validation") {
  CHECK_THROWS_AS(MlpModel::random({3, 4, 2}, 1), std::invalid_argument);
  CHECK_THROWS_AS(MlpModel({2, 2}, {}), std::invalid_argument);
  Matrix wrong(2, 2);
  wrong.setZero();
  CHECK_THROWS_AS(MlpModel({2, 2}, {{wrong, Vector::Zero(2)}}), std::invalid_argument);
  const auto m = testing::random_mlp(2, 1);
  CHECK_THROWS_AS(m.eps(Vector::Zero(3), NoiseLevel::from_alpha(0.5)), std::invalid_argument);
}

TEST_CASE("score model properties hold for every model family") {
  sag::Rng rng(2024);
  const auto s = testing::default_schedule();
  std::vector<std::unique_ptr<ScoreModel>> models;
  models.push_back(std::make_unique<GmmModel>(testing::two_mode_gmm(3)));
  models.push_back(std::make_unique<GmmModel>(testing::random_gmm(3, 3, rng)));
  models.push_back(std::make_unique<MlpModel>(testing::random_mlp(3, 77)));
  Matrix a(3, 3);
  for (Index c = 0; c < 3; ++c) a.col(c) = testing::random_vector(3, rng, 0.5);
  models.push_back(std::make_unique<AffineModel>(a, Vector::Ones(3)));

  std::uniform_int_distribution<int> step(1, s.num_steps());
  for (const auto& m : models) {
    CAPTURE(m->kind());
    for (int trial = 0; trial < 100; ++trial) {
      const int t = step(rng);
      const Vector x = testing::random_vector(3, rng, 1.5);
      const Vector v = testing::random_vector(3, rng);
      const Vector w = testing::random_vector(3, rng);
      const Vector jv = vjp_at(*m, x, s, t, v);
      const double h = 1e-5 * (1.0 + x.cwiseAbs().maxCoeff());
      const Vector fd = finite_diff_vjp(*m, x, s, t, v, h);
      CHECK((jv - fd).norm() <= 1e-5 * fd.norm() + 1e-10);

      // Linearity in the cotangent.
      const Vector lin = vjp_at(*m, x, s, t, 2.0 * v - 0.5 * w);
      const Vector sum = 2.0 * jv - 0.5 * vjp_at(*m, x, s, t, w);
      CHECK((lin - sum).norm() <= 1e-12 * (1.0 + sum.norm()));

      // JVP and VJP describe the same Jacobian.
      const Vector xbar = s.to_scaled(x, t);
      const double lhs = v.dot(m->jvp(xbar, s.level(t), w));
      const double rhs = m->vjp(xbar, s.level(t), v).dot(w);
      CHECK(std::abs(lhs - rhs) <= 1e-12 * (1.0 + std::abs(lhs)));

      // Determinism.
      CHECK(bitwise_equal(eps_at(*m, x, s, t), eps_at(*m, x, s, t)));
      CHECK(bitwise_equal(jv, vjp_at(*m, x, s, t, v)));
    }
  }
}

TEST_CASE("model JSON round trips") {
  const auto mlp = testing::random_mlp(3, 123);
  const auto mlp_back = MlpModel::from_json(mlp.to_json());
  CHECK(mlp_back.seed() == 123);
  const auto level = NoiseLevel::from_alpha(0.3);
  const Vector x = vec({0.1, 0.2, 0.3});
  CHECK(bitwise_equal(mlp.eps(x, level), mlp_back.eps(x, level)));

  const auto gmm = testing::two_mode_gmm(2);
  const auto gmm_back = GmmModel::from_json(gmm.to_json());
  CHECK(bitwise_equal(gmm.eps(vec({0.1, 0.2}), level), gmm_back.eps(vec({0.1, 0.2}), level)));

  auto bad = gmm.to_json();
  bad["weights"] = {0.3, 0.3};
  CHECK_THROWS_AS(GmmModel::from_json(bad), std::invalid_argument);
}
