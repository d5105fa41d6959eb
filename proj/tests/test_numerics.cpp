#include <doctest.h>

#include <cmath>

#include "dpclab/numerics.hpp"
#include "dpclab/systems.hpp"
#include "test_support.hpp"

using namespace dpclab;
using dpclab::testing::random_matrix;
using dpclab::testing::spectral_radius;

TEST_CASE("matrix_exponential of the zero matrix is the identity") {
  CHECK((matrix_exponential(Mat::Zero(2, 2)) - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("matrix_exponential of a diagonal matrix exponentiates the diagonal") {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = 0.3;
  m(1, 1) = -1.7;
  const Mat e = matrix_exponential(m);
  CHECK(e(0, 0) == doctest::Approx(std::exp(0.3)).epsilon(1e-12));
  CHECK(e(1, 1) == doctest::Approx(std::exp(-1.7)).epsilon(1e-12));
  CHECK(e(0, 1) == 0.0);
  CHECK(e(1, 0) == 0.0);
}

TEST_CASE("matrix_exponential of a nilpotent matrix truncates the series") {
  Mat m{{0.0, 1.0}, {0.0, 0.0}};
  const Mat e = matrix_exponential(m);
  CHECK(e(0, 0) == doctest::Approx(1.0));
  CHECK(e(0, 1) == doctest::Approx(1.0));
  CHECK(e(1, 0) == doctest::Approx(0.0));
  CHECK(e(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("matrix_exponential rejects non-square input") {
  CHECK_THROWS_AS(matrix_exponential(Mat::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("exp(M) exp(-M) = I for random matrices with spectral radius <= 2") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Mat m = random_matrix(rng, 4, 4);
    const double r = spectral_radius(m);
    if (r > 0.0) m *= rng.uniform(0.5, 2.0) / r;
    const Mat prod = matrix_exponential(m) * matrix_exponential(-m);
    CHECK((prod - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("numerical_rank on trivial matrices") {
  CHECK(numerical_rank(Mat::Zero(3, 3), 1e-9) == 0);
  CHECK(numerical_rank(Mat::Identity(4, 4), 1e-9) == 4);
  CHECK(numerical_rank(Mat(0, 0), 1e-9) == 0);
}

TEST_CASE("numerical_rank of an outer product is one") {
  const Vec a{{1.0, -2.0, 0.5}};
  const Vec b{{3.0, 1.0, -1.0}};
  Mat m = a * b.transpose();

  // Oracle: explicit Gaussian elimination on the 3x3 result.
  Mat g = m;
  int pivots = 0;
  for (int col = 0; col < 3; ++col) {
    int piv = -1;
    for (int row = pivots; row < 3; ++row) {
      if (std::abs(g(row, col)) > 1e-12) {
        piv = row;
        break;
      }
    }
    if (piv < 0) continue;
    g.row(piv).swap(g.row(pivots));
    for (int row = pivots + 1; row < 3; ++row) {
      g.row(row) -= (g(row, col) / g(pivots, col)) * g.row(pivots);
    }
    ++pivots;
  }
  CHECK(pivots == 1);
  CHECK(numerical_rank(m, 1e-9) == pivots);
  CHECK(numerical_rank(m, 1e-9, RankMethod::Svd) == pivots);
}

TEST_CASE("numerical_rank is invariant under row and column permutation") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 5;
    Mat left = random_matrix(rng, n, 2);
    Mat right = random_matrix(rng, 2, n);
    Mat m = left * right;  // rank 2 by construction
    Mat permuted = m;
    permuted.row(0).swap(permuted.row(n - 1));
    permuted.col(1).swap(permuted.col(n - 2));
    CHECK(numerical_rank(m, 1e-9) == numerical_rank(permuted, 1e-9));
    CHECK(numerical_rank(m, 1e-9) == 2);
  }
}

TEST_CASE("rk4_step keeps the state fixed for a zero derivative") {
  const Vec x{{1.0, -2.0, 3.0}};
  const Vec out = rk4_step([](const Vec& xi, const Vec&) { return Vec::Zero(xi.size()); },
                           x, Vec::Zero(1), 0.1);
  CHECK((out - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rk4_step matches the scalar exponential to fifth order") {
  const double a = -0.8;
  const double x0 = 2.0;
  DerivativeFn f = [a](const Vec& x, const Vec&) -> Vec { return a * x; };
  for (double h : {0.1, 0.05}) {
    const double exact = std::exp(a * h) * x0;
    const double got = rk4_step(f, Vec::Constant(1, x0), Vec::Zero(1), h)(0);
    // Local truncation term is a^5 h^5 x0 / 5!.
    const double bound = 2.0 * std::abs(std::pow(a * h, 5) * x0) / 120.0;
    CHECK(std::abs(got - exact) <= bound);
  }
}

TEST_CASE("rk4_step error order is at least four when halving the step") {
  Rng rng(5);
  Mat a = random_matrix(rng, 3, 3);
  a *= 1.0 / spectral_radius(a);
  const Vec x0 = random_matrix(rng, 3, 1);
  DerivativeFn f = [&a](const Vec& x, const Vec&) -> Vec { return a * x; };
  std::vector<double> hs{0.4, 0.2, 0.1, 0.05};
  std::vector<double> errs;
  for (double h : hs) {
    const Vec exact = matrix_exponential(a * h) * x0;
    const Vec got = rk4_step(f, x0, Vec::Zero(1), h);
    errs.push_back((got - exact).cwiseAbs().maxCoeff());
  }
  // log-log slope between successive halvings
  for (size_t i = 0; i + 1 < errs.size(); ++i) {
    const double order = std::log2(errs[i] / errs[i + 1]);
    CHECK(order >= 4.0);
  }
}

TEST_CASE("rk4_step over one sample matches the ZOH update through substeps") {
  const ContinuousLTI sys = linearize_frozen({15.0, 15.0});
  const double ts = 2.69;
  const DiscreteLTI d = zoh_discretize(sys, ts);
  const Vec x0{{1.4, 1.6}};
  const Vec u = Vec::Constant(1, 0.75);
  DerivativeFn f = [&sys](const Vec& x, const Vec& uu) -> Vec {
    return sys.A * x + sys.B * uu;
  };
  Vec x = x0;
  const int substeps = 20;
  for (int i = 0; i < substeps; ++i) x = rk4_step(f, x, u, ts / substeps);
  const Vec expected = d.A * x0 + d.B * u;
  CHECK((x - expected).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("rk4_step reports the state where the derivative became non-finite") {
  DerivativeFn f = [](const Vec& x, const Vec&) -> Vec {
    return Vec::Constant(x.size(), std::sqrt(-1.0));
  };
  const Vec x0{{4.0}};
  try {
    rk4_step(f, x0, Vec::Zero(1), 0.1);
    FAIL("expected IntegrationError");
  } catch (const IntegrationError& e) {
    CHECK(e.state()(0) == 4.0);
  }
}
