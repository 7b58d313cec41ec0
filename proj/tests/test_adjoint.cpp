// SPDX-License-Identifier: Apache-2.0

#include "sag/adjoint.hpp"
#include "sag/losses.hpp"

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

NoiseSchedule frozen_grid_schedule() {
  return NoiseSchedule({1.0, 0.8620689655172413, 0.45248868778280543, 0.2});
}

AffineModel frozen_affine() {
  Matrix a(2, 2);
  a << 0.3, -0.2, 0.1, 0.5;
  return AffineModel(a, Vector::Zero(2));
}

bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("zero model: every adjoint returns the rescaled cotangent") {
  const auto s = testing::default_schedule();
  const auto m = AffineModel::zero(2);
  const Vector x = vec({0.4, -1.2});
  const Vector g = vec({1.0, 3.0});
  const Vector expected = g / std::sqrt(s.alpha(30));
  const auto traj = estimate_clean(m, s, x, 30, 4);
  CHECK(rel_err(symplectic_euler_grad(m, traj, g, s, 30), expected) <= 1e-15);
  CHECK(rel_err(direct_backprop_grad(m, traj, g, s, 30), expected) <= 1e-15);
  CHECK(rel_err(vanilla_adjoint_grad(m, traj.clean_output, g, s, 30, 4), expected) <= 1e-15);
  const auto rk = estimate_clean_rk(m, s, x, 30, 4, heun_tableau());
  CHECK(rel_err(rk.clean_output, x / std::sqrt(s.alpha(30))) <= 1e-15);
  CHECK(rel_err(symplectic_rk_grad(m, rk, g, s, 30), expected) <= 1e-15);
}

TEST_CASE("affine model pins the orientation of the symplectic Euler step") {
  // Frozen from tests/oracles/frozen_values.py: prod_tau (I - h_tau A)^T g.
  const auto s = frozen_grid_schedule();
  const auto m = frozen_affine();
  const Vector g = vec({0.25, -1.0});
  const auto traj = estimate_clean(m, s, vec({1.0, 1.0}), 3, 3);
  const Vector expected = vec({0.232154, -0.21203}) / std::sqrt(s.alpha(3));
  CHECK(rel_err(symplectic_euler_grad(m, traj, g, s, 3), expected) <= 1e-12);
  CHECK(rel_err(direct_backprop_grad(m, traj, g, s, 3), expected) <= 1e-12);
}

TEST_CASE("symplectic Euler equals the discrete gradient") {
  const auto s = testing::default_schedule();
  sag::Rng rng(17);
  for (int d : {1, 3, 5}) {
    const auto gmm = testing::random_gmm(d, 3, rng);
    const auto mlp = testing::random_mlp(d, 100 + d);
    for (const ScoreModel* m : {static_cast<const ScoreModel*>(&gmm),
                                static_cast<const ScoreModel*>(&mlp)}) {
      for (int n : {1, 2, 3, 8}) {
        const Vector x = testing::random_vector(d, rng, 1.5);
        const Vector g = testing::random_vector(d, rng);
        const int t = 40;
        const auto traj = estimate_clean(*m, s, x, t, n);
        const Vector sym = symplectic_euler_grad(*m, traj, g, s, t);
        CHECK(rel_err(sym, direct_backprop_grad(*m, traj, g, s, t)) <= 1e-9);
        CHECK(rel_err(sym, testing::forward_mode_grad(*m, traj, g, s, t)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("direct gradient agrees with finite differences of the forward solve") {
  const auto s = testing::default_schedule();
  const auto mlp = testing::random_mlp(3, 4);
  const auto gmm = testing::two_mode_gmm(3);
  const L2TargetLoss loss(vec({1.0, -0.5, 0.25}));
  sag::Rng rng(8);
  for (const ScoreModel* m : {static_cast<const ScoreModel*>(&gmm),
                              static_cast<const ScoreModel*>(&mlp)}) {
    const Vector x = testing::random_vector(3, rng);
    const int t = 33, n = 5;
    const auto traj = estimate_clean(*m, s, x, t, n);
    const Vector g = loss.evaluate(traj.clean_output).grad;
    const Vector fd = testing::fd_gradient(
        [&](const Vector& xt) { return loss.value(estimate_clean(*m, s, xt, t, n).clean_output); },
        x);
    CHECK(rel_err(direct_backprop_grad(*m, traj, g, s, t), fd) <= 1e-5);
  }
}

TEST_CASE("trajectory mismatches are rejected") {
  const auto s = testing::default_schedule();
  const auto m = testing::random_mlp(2, 3);
  const auto traj = estimate_clean(m, s, vec({0.1, 0.2}), 20, 3);
  CHECK_THROWS_AS(symplectic_euler_grad(m, traj, vec({1.0, 2.0}), s, 21), std::invalid_argument);
  CHECK_THROWS_AS(symplectic_euler_grad(m, traj, vec({1.0}), s, 20), std::invalid_argument);
  const auto other = testing::random_mlp(2, 4);
  CHECK_THROWS_AS(direct_backprop_grad(other, traj, vec({1.0, 2.0}), s, 20),
                  std::invalid_argument);
  CHECK_THROWS_AS(vanilla_adjoint_grad(m, vec({0.1, 0.2}), vec({1.0, 2.0}), s, 20, 0),
                  std::invalid_argument);
  auto broken = traj;
  broken.states.pop_back();
  CHECK_THROWS_AS(symplectic_euler_grad(m, broken, vec({1.0, 2.0}), s, 20), std::invalid_argument);
}

TEST_CASE("vanilla adjoint") {
  const auto s = testing::default_schedule();
  const int t = 35;
  SUBCASE("worse than symplectic on a GMM") {
    const auto m = testing::two_mode_gmm(2);
    sag::Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      const Vector x = m.sample_marginal(s.alpha(t), rng);
      const Vector g = testing::random_vector(2, rng);
      const auto traj = estimate_clean(m, s, x, t, 4);
      const Vector oracle = direct_backprop_grad(m, traj, g, s, t);
      const double e_sym = rel_err(symplectic_euler_grad(m, traj, g, s, t), oracle);
      const double e_van = rel_err(vanilla_adjoint_grad(m, traj.clean_output, g, s, t, 4), oracle);
      CHECK(e_van > e_sym);
      CHECK(e_van >= 10.0 * e_sym);
    }
  }
  SUBCASE("first-order convergence on the affine model") {
    // Continuous gradient: exp(-sigma_t A)^T g / sqrt(alpha_t).
    const auto m = frozen_affine();
    const Vector g = vec({0.25, -1.0});
    const double sig = s.sigma(t);
    Eigen::EigenSolver<Matrix> es(-sig * m.matrix().transpose());
    const Matrix expo =
        (es.eigenvectors() * es.eigenvalues().array().exp().matrix().asDiagonal() *
         es.eigenvectors().inverse())
            .real();
    const Vector exact = expo * g / std::sqrt(s.alpha(t));
    const Vector x_clean = vec({0.3, 0.9});
    double prev = 0.0;
    for (int n : {32, 64, 128, 256}) {
      const double err = rel_err(vanilla_adjoint_grad(m, x_clean, g, s, t, n), exact);
      if (prev > 0.0) CHECK(std::log2(prev / err) == doctest::Approx(1.0).epsilon(0.3));
      prev = err;
    }
  }
}

TEST_CASE("tableaus") {
  const auto heun = heun_tableau();
  CHECK(heun.condition_residual() == 0.0);
  CHECK(heun.adj_a(0, 0) == 0.5);
  CHECK(heun.adj_a(0, 1) == -0.5);
  CHECK(heun.adj_a(1, 0) == 0.5);
  CHECK(heun.adj_a(1, 1) == 0.5);
  CHECK_NOTHROW(heun.validate());
  CHECK(euler_tableau().adj_a(0, 0) == 1.0);

  auto bad = heun;
  bad.adj_a(0, 1) = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  auto implicit = heun;
  implicit.a(0, 1) = 0.1;
  CHECK_THROWS_AS(implicit.validate(), std::invalid_argument);
  auto wrong_c = heun;
  wrong_c.adj_c[1] = 0.5;
  CHECK_THROWS_AS(wrong_c.validate(), std::invalid_argument);
  Vector zero_b(2);
  zero_b << 1.0, 0.0;
  CHECK_THROWS_AS(conjugate_tableau(heun.a, zero_b, heun.c), std::invalid_argument);

  const auto back = ButcherTableau::from_json(heun.to_json());
  CHECK(back.adj_a == heun.adj_a);
  nlohmann::json forward_only = heun.to_json();
  forward_only.erase("A");
  forward_only.erase("B");
  forward_only.erase("C");
  CHECK(ButcherTableau::from_json(forward_only).adj_a == heun.adj_a);

  // Third-order Kutta: the conjugate solve still satisfies every condition.
  Matrix a = Matrix::Zero(3, 3);
  a(1, 0) = 0.5;
  a(2, 0) = -1.0;
  a(2, 1) = 2.0;
  Vector b(3), c(3);
  b << 1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0;
  c << 0.0, 0.5, 1.0;
  CHECK(conjugate_tableau(a, b, c).condition_residual() <= 1e-15);
}

TEST_CASE("RK forward solve") {
  const auto s = testing::default_schedule();
  const auto m = testing::random_mlp(3, 6);
  const Vector x = vec({0.2, -0.4, 1.0});
  SUBCASE("degenerate one-stage tableau is Euler") {
    const auto rk = estimate_clean_rk(m, s, x, 25, 4, euler_tableau());
    const auto eu = estimate_clean(m, s, x, 25, 4);
    for (int tau = 0; tau <= 4; ++tau) CHECK(bitwise_equal(rk.states[tau], eu.states[tau]));
  }
  SUBCASE("Heun on the affine model matches the frozen two-stage recurrence") {
    const auto fs = frozen_grid_schedule();
    const auto fm = frozen_affine();
    const auto rk = estimate_clean_rk(fm, fs, vec({1.5, -0.7}) * std::sqrt(fs.alpha(3)), 3, 3,
                                      heun_tableau());
    CHECK(rel_err(rk.clean_output, vec({0.6785217882306, -0.38063819691179995})) <= 1e-12);
  }
  SUBCASE("stage records") {
    const auto rk = estimate_clean_rk(m, s, x, 25, 3, heun_tableau());
    for (int tau = 1; tau <= 3; ++tau) {
      CHECK(rk.stage_points[tau].size() == 2);
      CHECK(rk.stage_points[tau][0] == rk.states[tau]);
      CHECK(rk.stage_levels[tau][1].sigma == rk.sub.sigma[tau - 1]);
    }
  }
}

TEST_CASE("symplectic RK adjoint") {
  const auto s = testing::default_schedule();
  sag::Rng rng(23);
  SUBCASE("one stage is bitwise symplectic Euler") {
    const auto m = testing::random_mlp(3, 12);
    const Vector x = testing::random_vector(3, rng);
    const Vector g = testing::random_vector(3, rng);
    const auto rk = estimate_clean_rk(m, s, x, 30, 5, euler_tableau());
    const auto eu = estimate_clean(m, s, x, 30, 5);
    CHECK(bitwise_equal(symplectic_rk_grad(m, rk, g, s, 30), symplectic_euler_grad(m, eu, g, s, 30)));
  }
  SUBCASE("Heun pair is the exact discrete gradient") {
    for (int d : {1, 2, 4}) {
      const auto mlp = testing::random_mlp(d, 50 + d);
      const auto gmm = testing::random_gmm(d, 2, rng);
      for (const ScoreModel* m : {static_cast<const ScoreModel*>(&gmm),
                                  static_cast<const ScoreModel*>(&mlp)}) {
        const Vector x = testing::random_vector(d, rng);
        const Vector g = testing::random_vector(d, rng);
        const auto rk = estimate_clean_rk(*m, s, x, 30, 3, heun_tableau());
        const Vector sym = symplectic_rk_grad(*m, rk, g, s, 30);
        CHECK(rel_err(sym, direct_backprop_rk_grad(*m, rk, g, s, 30)) <= 1e-9);
        CHECK(rel_err(sym, testing::forward_mode_rk_grad(*m, rk, g, s, 30)) <= 1e-9);
      }
    }
  }
  SUBCASE("non-conjugate adjoint tableau is rejected") {
    const auto m = testing::random_mlp(2, 1);
    auto rk = estimate_clean_rk(m, s, vec({0.1, 0.1}), 30, 2, heun_tableau());
    rk.tableau.adj_a(0, 1) = 0.25;
    CHECK_THROWS_AS(symplectic_rk_grad(m, rk, vec({1.0, 0.0}), s, 30), std::invalid_argument);
  }
}

TEST_CASE("conservation of the adjoint-variational pairing") {
  const auto s = testing::default_schedule();
  sag::Rng rng(31);
  SUBCASE("zero model keeps S exactly constant") {
    const auto m = AffineModel::zero(3);
    const auto traj = estimate_clean(m, s, vec({1.0, 2.0, 3.0}), 20, 4);
    const Vector v0 = vec({0.5, 0.1, -0.3});
    const Vector l0 = vec({1.0, -1.0, 2.0});
    for (double v : conservation_probe(m, traj, v0, l0)) CHECK(v == l0.dot(v0));
  }
  SUBCASE("affine and MLP models") {
    const auto affine = frozen_affine();
    const auto mlp = testing::random_mlp(2, 5);
    for (const ScoreModel* m : {static_cast<const ScoreModel*>(&affine),
                                static_cast<const ScoreModel*>(&mlp)}) {
      const auto traj = estimate_clean(*m, s, testing::random_vector(2, rng), 45, 5);
      const Vector v0 = testing::random_vector(2, rng);
      const Vector l0 = testing::random_vector(2, rng);
      const auto pairing = conservation_probe(*m, traj, v0, l0);
      CHECK(pairing.size() == 6);
      for (double v : pairing) CHECK(std::abs(v - pairing[0]) <= 1e-10 * std::abs(pairing[0]));
    }
  }
}

TEST_CASE("memory accounting") {
  const auto s = testing::default_schedule();
  const auto m = testing::random_mlp(3, 2, 8, 3);
  const Vector x = vec({0.3, 0.2, 0.1});
  const Vector g = vec({1.0, 1.0, 1.0});
  std::size_t first_sym_extra = 0;
  for (int n : {1, 2, 4, 8}) {
    const auto traj = estimate_clean(m, s, x, 30, n);
    AdjointStats sym, direct, vanilla;
    symplectic_euler_grad(m, traj, g, s, 30, &sym);
    direct_backprop_grad(m, traj, g, s, 30, &direct);
    vanilla_adjoint_grad(m, traj.clean_output, g, s, 30, n, &vanilla);
    CHECK(sym.checkpoints_stored == static_cast<std::size_t>(n) + 1);
    if (n == 1) first_sym_extra = sym.peak_extra_vectors + sym.stored_activations;
    CHECK(sym.peak_extra_vectors + sym.stored_activations == first_sym_extra);
    // One tape per sub-step: input plus features plus one pre-activation per layer.
    CHECK(direct.stored_activations == static_cast<std::size_t>(n) * (m.num_layers() + 2));
    CHECK(vanilla.checkpoints_stored == 0);

    const auto rk = estimate_clean_rk(m, s, x, 30, n, heun_tableau());
    AdjointStats rk_stats;
    symplectic_rk_grad(m, rk, g, s, 30, &rk_stats);
    CHECK(rk_stats.stage_records == static_cast<std::size_t>(n) * 2);
  }
}
