#include <doctest.h>

#include <cmath>

#include "dpclab/systems.hpp"
#include "test_support.hpp"

using namespace dpclab;
using dpclab::testing::random_matrix;
using dpclab::testing::random_stable_system;
using dpclab::testing::simulate_lti;

TEST_CASE("two_tank_derivative at empty tanks with no inflow is zero") {
  const auto d = two_tank_derivative({0.0, 0.0}, 0.0);
  CHECK(d(0) == 0.0);
  CHECK(d(1) == 0.0);
}

TEST_CASE("two_tank_derivative by direct substitution") {
  SUBCASE("unit levels, no input") {
    const auto d = two_tank_derivative({1.0, 1.0}, 0.0);
    CHECK(d(0) == doctest::Approx(-0.904).epsilon(1e-12));
    CHECK(d(1) == doctest::Approx(0.904 - 0.508).epsilon(1e-12));
  }
  SUBCASE("levels 15, pump at 10 V") {
    const auto d = two_tank_derivative({15.0, 15.0}, 10.0);
    const double s15 = std::sqrt(15.0);
    CHECK(d(0) == doctest::Approx(-0.904 * s15 + 2.58).epsilon(1e-12));
    CHECK(d(1) == doctest::Approx(0.904 * s15 - 0.508 * s15).epsilon(1e-12));
    CHECK(d(0) == doctest::Approx(-0.9212).epsilon(1e-4));
    CHECK(d(1) == doctest::Approx(1.5337).epsilon(1e-4));
  }
}

TEST_CASE("two_tank_derivative clamps negative levels and counts the event") {
  TankDiagnostics diag;
  const auto d = two_tank_derivative({-1.0, 4.0}, 0.0, &diag);
  CHECK(diag.clamp_events == 1);
  CHECK(d(0) == 0.0);
  CHECK(d(1) == doctest::Approx(-0.508 * 2.0));
}

TEST_CASE("tank mass balance: inflow to tank 2 grows with tank-1 level") {
  for (double x1 : {0.5, 2.0, 10.0, 40.0}) {
    const double eps = 1e-6;
    const double hi = two_tank_derivative({x1 + eps, 9.0}, 3.0)(1);
    const double lo = two_tank_derivative({x1 - eps, 9.0}, 3.0)(1);
    CHECK(hi - lo >= 0.0);
  }
}

TEST_CASE("linearize_frozen evaluates the level dependency at the nominal point") {
  auto expect_a = [](const Eigen::Vector2d& x_nom, const ContinuousLTI& sys) {
    // Oracle: direct evaluation of the frozen coefficients.
    const double th1 = 1.0 / std::sqrt(x_nom(0));
    const double th2 = 1.0 / std::sqrt(x_nom(1));
    CHECK(sys.A(0, 0) == doctest::Approx(-0.904 * th1).epsilon(1e-14));
    CHECK(sys.A(0, 1) == 0.0);
    CHECK(sys.A(1, 0) == doctest::Approx(0.904 * th1).epsilon(1e-14));
    CHECK(sys.A(1, 1) == doctest::Approx(-0.508 * th2).epsilon(1e-14));
    CHECK(sys.B(0, 0) == 0.258);
    CHECK(sys.B(1, 0) == 0.0);
    CHECK(sys.C(0, 0) == 0.0);
    CHECK(sys.C(0, 1) == 1.0);
    CHECK(sys.D(0, 0) == 0.0);
  };
  SUBCASE("at 15 cm") {
    const auto sys = linearize_frozen({15.0, 15.0});
    expect_a({15.0, 15.0}, sys);
    CHECK(sys.A(0, 0) == doctest::Approx(-0.233411).epsilon(1e-5));
    CHECK(sys.A(1, 1) == doctest::Approx(-0.131165).epsilon(1e-5));
  }
  SUBCASE("at 10 cm") {
    const auto sys = linearize_frozen({10.0, 10.0});
    expect_a({10.0, 10.0}, sys);
    CHECK(sys.A(0, 0) == doctest::Approx(-0.285863).epsilon(1e-5));
    CHECK(sys.A(1, 1) == doctest::Approx(-0.160643).epsilon(1e-5));
  }
  SUBCASE("at 30 cm") {
    const auto sys = linearize_frozen({30.0, 30.0});
    expect_a({30.0, 30.0}, sys);
    CHECK(sys.A(0, 0) == doctest::Approx(-0.165047).epsilon(1e-5));
    CHECK(sys.A(1, 1) == doctest::Approx(-0.092748).epsilon(1e-5));
  }
  SUBCASE("rejects non-positive levels") {
    CHECK_THROWS_AS(linearize_frozen({0.0, 10.0}), std::invalid_argument);
    CHECK_THROWS_AS(linearize_frozen({10.0, -1.0}), std::invalid_argument);
  }
}

TEST_CASE("zoh_discretize of an integrator gives A=I, B=Ts*I") {
  ContinuousLTI sys;
  sys.A = Mat::Zero(2, 2);
  sys.B = Mat::Identity(2, 2);
  sys.C = Mat::Identity(2, 2);
  sys.D = Mat::Zero(2, 2);
  const auto d = zoh_discretize(sys, 0.25);
  CHECK((d.A - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((d.B - 0.25 * Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(d.ts == 0.25);
}

TEST_CASE("zoh_discretize of a scalar system is the closed-form exponential") {
  ContinuousLTI sys;
  sys.A = Mat::Constant(1, 1, -0.7);
  sys.B = Mat::Constant(1, 1, 2.0);
  sys.C = Mat::Constant(1, 1, 1.0);
  sys.D = Mat::Zero(1, 1);
  const double ts = 1.3;
  const auto d = zoh_discretize(sys, ts);
  CHECK(d.A(0, 0) == doctest::Approx(std::exp(-0.7 * ts)).epsilon(1e-12));
  CHECK(d.B(0, 0) == doctest::Approx(2.0 * (std::exp(-0.7 * ts) - 1.0) / -0.7).epsilon(1e-12));
}

TEST_CASE("zoh_discretize matches dense RK4 propagation of the tank linearization") {
  const ContinuousLTI sys = linearize_frozen({15.0, 15.0});
  const double ts = 2.69;
  const auto d = zoh_discretize(sys, ts);
  const Vec x0{{12.0, 17.0}};
  const Vec u = Vec::Constant(1, 6.0);
  DerivativeFn f = [&sys](const Vec& x, const Vec& uu) -> Vec {
    return sys.A * x + sys.B * uu;
  };
  Vec x = x0;
  for (int i = 0; i < 50; ++i) x = rk4_step(f, x, u, ts / 50);
  CHECK((x - (d.A * x0 + d.B * u)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("zoh_discretize preserves the steady-state gain") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    ContinuousLTI sys;
    sys.A = random_matrix(rng, 3, 3);
    sys.A -= 2.5 * Mat::Identity(3, 3);  // push poles into the left half plane
    sys.B = random_matrix(rng, 3, 1);
    sys.C = random_matrix(rng, 1, 3);
    sys.D = random_matrix(rng, 1, 1);
    const auto d = zoh_discretize(sys, 0.7);
    const Mat gain_ct = -sys.C * sys.A.inverse() * sys.B + sys.D;
    const Mat gain_dt =
        d.C * (Mat::Identity(3, 3) - d.A).inverse() * d.B + d.D;
    CHECK((gain_ct - gain_dt).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("derive_sampling_time follows the fastest-pole rule") {
  SUBCASE("unit-frequency pole") {
    CHECK(derive_sampling_time(2.0 * std::numbers::pi, 10) == doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("tank linearized at 15 cm reproduces Ts = 2.69 s") {
    const auto sys = linearize_frozen({15.0, 15.0});
    const double fastest = sys.A.eigenvalues().cwiseAbs().maxCoeff();
    CHECK(fastest == doctest::Approx(0.904 / std::sqrt(15.0)).epsilon(1e-12));
    const double ts = derive_sampling_time(fastest, 10);
    CHECK(ts == doctest::Approx(2.0 * std::numbers::pi / (10.0 * fastest)).epsilon(1e-12));
    CHECK(ts == doctest::Approx(2.6919).epsilon(1e-4));
    CHECK(std::abs(ts - 2.69) < 0.005);
  }
  SUBCASE("pole at 1 cm level approximates the faster sampling choice") {
    const double ts = derive_sampling_time(0.904, 10);
    CHECK(ts == doctest::Approx(0.695042).epsilon(1e-5));
    CHECK(std::abs(ts - 0.69) < 0.01);
  }
  SUBCASE("rejects non-positive pole") {
    CHECK_THROWS_AS(derive_sampling_time(0.0), std::invalid_argument);
  }
}

TEST_CASE("build_ot_representation block structure") {
  Rng rng(31);
  const DiscreteLTI sys = random_stable_system(rng, 2, 1, 1);
  SUBCASE("horizon one is (C, D)") {
    const auto rep = build_ot_representation(sys, 1);
    CHECK((rep.O - sys.C).cwiseAbs().maxCoeff() == 0.0);
    CHECK((rep.T - sys.D).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("horizon two stacks (C; CA) and [[D,0],[CB,D]]") {
    const auto rep = build_ot_representation(sys, 2);
    CHECK((rep.O.topRows(1) - sys.C).cwiseAbs().maxCoeff() == 0.0);
    CHECK((rep.O.bottomRows(1) - sys.C * sys.A).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(rep.T(0, 0) == sys.D(0, 0));
    CHECK(rep.T(0, 1) == 0.0);
    CHECK(rep.T(1, 0) == doctest::Approx((sys.C * sys.B)(0, 0)).epsilon(1e-15));
    CHECK(rep.T(1, 1) == sys.D(0, 0));
  }
}

TEST_CASE("O x0 + T u equals the step-by-step recursion") {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    const DiscreteLTI sys = random_stable_system(rng, 2, 1, 1);
    const int h = 6;
    const Vec x0 = random_matrix(rng, 2, 1);
    const Mat u = random_matrix(rng, 1, h);
    const auto rep = build_ot_representation(sys, h);
    Vec u_flat(h);
    for (int k = 0; k < h; ++k) u_flat(k) = u(0, k);
    const Vec via_ot = rep.O * x0 + rep.T * u_flat;
    const Vec via_sim = simulate_lti(sys, x0, u);
    CHECK((via_ot - via_sim).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("residual_ot special cases") {
  Rng rng(41);
  const DiscreteLTI sys = random_stable_system(rng, 2, 1, 1);
  SUBCASE("model equal to the plant cancels exactly") {
    const auto rep = residual_ot(sys, sys, 4);
    CHECK(rep.O.cwiseAbs().maxCoeff() == 0.0);
    CHECK(rep.T.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("all-zero model leaves the plant representation") {
    DiscreteLTI zero = sys;
    zero.A.setZero();
    zero.B.setZero();
    zero.C.setZero();
    zero.D.setZero();
    const auto rep = residual_ot(sys, zero, 4);
    const auto plant = build_ot_representation(sys, 4);
    CHECK((rep.O - plant.O).cwiseAbs().maxCoeff() == 0.0);
    CHECK((rep.T - plant.T).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("residual rollout equals parallel simulation with shared state and input") {
  const auto plant = zoh_discretize(linearize_frozen({15.0, 15.0}), 2.69);
  const auto model = zoh_discretize(linearize_frozen({10.0, 10.0}), 2.69);
  Rng rng(43);
  const int h = 5;
  const Vec x0{{9.0, 14.0}};
  const Mat u = random_matrix(rng, 1, h, 0.0, 10.0);
  Vec u_flat(h);
  for (int k = 0; k < h; ++k) u_flat(k) = u(0, k);
  const auto rep = residual_ot(plant, model, h);
  const Vec via_rep = rep.O * x0 + rep.T * u_flat;
  const Vec via_parallel = simulate_lti(plant, x0, u) - simulate_lti(model, x0, u);
  CHECK((via_rep - via_parallel).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("lti_equilibrium holds the target output at steady state") {
  const auto d = zoh_discretize(linearize_frozen({15.0, 15.0}), 2.69);
  const auto eq = lti_equilibrium(d, Vec::Constant(1, 15.0));
  REQUIRE(eq.has_value());
  CHECK((d.C * eq->x)(0) == doctest::Approx(15.0).epsilon(1e-10));
  CHECK((d.A * eq->x + d.B * eq->u - eq->x).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("lti_equilibrium of the all-zero quadruple does not exist") {
  DiscreteLTI zero;
  zero.A = Mat::Zero(2, 2);
  zero.B = Mat::Zero(2, 1);
  zero.C = Mat::Zero(1, 2);
  zero.D = Mat::Zero(1, 1);
  zero.ts = 1.0;
  CHECK_FALSE(lti_equilibrium(zero, Vec::Constant(1, 15.0)).has_value());
}

TEST_CASE("two_tank_equilibrium zeroes the derivatives") {
  const auto eq = two_tank_equilibrium(15.0);
  const auto d = two_tank_derivative({eq.x(0), eq.x(1)}, eq.u(0));
  CHECK(std::abs(d(0)) < 1e-12);
  CHECK(std::abs(d(1)) < 1e-12);
  CHECK(eq.x(1) == 15.0);
}

TEST_CASE("TwoTankPlant holds its equilibrium and clamps at empty") {
  TwoTankPlant plant(0.69, 10);
  const auto eq = two_tank_equilibrium(15.0);
  plant.reset(eq.x);
  for (int k = 0; k < 20; ++k) plant.apply(eq.u(0));
  CHECK(plant.measure() == doctest::Approx(15.0).epsilon(1e-9));

  plant.reset(Vec{{0.01, 0.01}});
  for (int k = 0; k < 50; ++k) plant.apply(0.0);
  CHECK(plant.state().minCoeff() >= 0.0);
  CHECK(plant.measure() < 0.05);
}

TEST_CASE("LinearPlant recursion matches the O-T rollout over a window") {
  Rng rng(47);
  const auto d = zoh_discretize(linearize_frozen({15.0, 15.0}), 2.69);
  LinearPlant plant(d);
  const Vec x0{{8.0, 15.0}};
  plant.reset(x0);
  const int h = 7;
  Mat u = random_matrix(rng, 1, h, 0.0, 12.0);
  Vec y_logged(h), u_flat(h);
  for (int k = 0; k < h; ++k) {
    y_logged(k) = plant.measure();
    plant.apply(u(0, k));
    u_flat(k) = u(0, k);
  }
  const auto rep = build_ot_representation(d, h);
  CHECK((rep.O * x0 + rep.T * u_flat - y_logged).cwiseAbs().maxCoeff() < 1e-10);
}
