// SPDX-License-Identifier: Apache-2.0

#include "sag/schedule.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace sag;

TEST_CASE("linear schedule with constant beta is a plain cumulative product") {
  const auto s = build_linear_schedule(2, 0.5, 0.5);
  CHECK(s.num_steps() == 2);
  CHECK(s.alpha(0) == 1.0);
  CHECK(s.alpha(1) == 0.5);
  CHECK(s.alpha(2) == 0.25);
}

TEST_CASE("thousand-step linear schedule reaches the frozen terminal alpha") {
  // Frozen from tests/oracles/frozen_values.py.
  const auto s = build_linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.alpha(1000) == doctest::Approx(4.035829765375676e-05).epsilon(1e-10));
}

TEST_CASE("linear schedule rejects bad arguments") {
  CHECK_THROWS_AS(build_linear_schedule(2, 0.5, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(1, 0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(10, 0.3, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(10, 0.0, 0.2), std::invalid_argument);
  // 1 - beta underflows the cumulative product to zero.
  CHECK_THROWS_AS(build_linear_schedule(100000, 0.999, 0.999), std::invalid_argument);
}

TEST_CASE("sigma values") {
  const NoiseSchedule s({1.0, 0.5, 0.2});
  CHECK(s.sigma(0) == 0.0);
  CHECK(s.sigma(1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.sigma(2) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK_THROWS_AS(s.sigma(3), std::out_of_range);
  CHECK_THROWS_AS(s.sigma(-1), std::out_of_range);
}

TEST_CASE("explicit alpha arrays are validated") {
  CHECK_THROWS_AS(NoiseSchedule({0.9, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule({1.0, 0.5, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule({1.0, 0.5, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule({1.0}), std::invalid_argument);
}

TEST_CASE("sigma is strictly increasing on every constructed schedule") {
  for (auto [steps, lo, hi] : {std::tuple{50, 0.002, 0.4}, std::tuple{1000, 1e-4, 0.02},
                               std::tuple{7, 0.3, 0.3}}) {
    const auto s = build_linear_schedule(steps, lo, hi);
    CHECK(s.sigma(0) == 0.0);
    for (int t = 0; t < steps; ++t) CHECK(s.sigma(t + 1) > s.sigma(t));
  }
}

TEST_CASE("scaled coordinates") {
  const NoiseSchedule s({1.0, 0.5, 0.25});
  Vector x(2);
  x << 2.0, -4.0;
  const Vector y = s.to_scaled(x, 2);
  CHECK(y[0] == 4.0);
  CHECK(y[1] == -8.0);
  CHECK(s.to_scaled(x, 0) == x);

  sag::Rng rng(11);
  const auto sched = testing::default_schedule();
  std::uniform_int_distribution<int> dim(1, 64);
  std::uniform_int_distribution<int> step(0, sched.num_steps());
  for (int trial = 0; trial < 200; ++trial) {
    const Vector v = testing::random_vector(dim(rng), rng, 3.0);
    const int t = step(rng);
    CHECK(testing::rel_err(sched.from_scaled(sched.to_scaled(v, t), t), v) <= 1e-14);
  }
}

TEST_CASE("log-linear interpolation is exact at knots and monotone between") {
  const auto s = testing::default_schedule();
  for (int t = 0; t <= s.num_steps(); ++t) CHECK(s.alpha_at(t) == s.alpha(t));
  double prev = 1.0;
  for (int i = 1; i <= 500; ++i) {
    const double a = s.alpha_at(i * 0.1);
    CHECK(a < prev);
    prev = a;
  }
  CHECK_THROWS_AS(s.alpha_at(50.5), std::out_of_range);
}

TEST_CASE("schedule JSON round trip validates on read") {
  const auto s = build_linear_schedule(10, 0.01, 0.2);
  const auto back = NoiseSchedule::from_json(s.to_json());
  CHECK(back.alphas() == s.alphas());

  auto bad = s.to_json();
  bad["alpha"][3] = 2.0;
  CHECK_THROWS_AS(NoiseSchedule::from_json(bad), std::invalid_argument);
  auto short_alpha = s.to_json();
  short_alpha["T"] = 11;
  CHECK_THROWS_AS(NoiseSchedule::from_json(short_alpha), std::invalid_argument);
}
