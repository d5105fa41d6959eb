#pragma once

#include <Eigen/Eigenvalues>

#include "dpclab/rng.hpp"
#include "dpclab/systems.hpp"

namespace dpclab::testing {

inline Mat random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                         double lo = -1.0, double hi = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

inline double spectral_radius(const Mat& a) {
  return a.eigenvalues().cwiseAbs().maxCoeff();
}

/// Random discrete SISO-ish system with spectral radius scaled below 1.
inline DiscreteLTI random_stable_system(Rng& rng, Eigen::Index nx,
                                        Eigen::Index nu = 1, Eigen::Index ny = 1,
                                        double radius = 0.9, double ts = 1.0) {
  DiscreteLTI sys;
  sys.A = random_matrix(rng, nx, nx);
  const double r = spectral_radius(sys.A);
  if (r > 0.0) sys.A *= radius / r;
  sys.B = random_matrix(rng, nx, nu);
  sys.C = random_matrix(rng, ny, nx);
  sys.D = Mat::Zero(ny, nu);
  sys.ts = ts;
  return sys;
}

/// Plain recursion of the state-space update, the independent oracle for the
/// stacked O-T form.
inline Vec simulate_lti(const DiscreteLTI& sys, const Vec& x0, const Mat& u) {
  Vec x = x0;
  Vec y(u.cols() * sys.n_y());
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    y.segment(k * sys.n_y(), sys.n_y()) = sys.C * x + sys.D * u.col(k);
    x = sys.A * x + sys.B * u.col(k);
  }
  return y;
}

}  // namespace dpclab::testing
