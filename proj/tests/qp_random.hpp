#pragma once

#include "dpclab/qp.hpp"
#include "dpclab/rng.hpp"

namespace dpclab::testing {

/// Seeded strictly convex QP with a mix of equality rows and finite
/// inequality rows, built around a known interior point so the problem is
/// always feasible.
inline QpProblem random_qp(Rng& rng, Eigen::Index max_vars = 50) {
  const auto n = static_cast<Eigen::Index>(2 + rng.next_u64() % (max_vars - 1));
  const auto n_eq = static_cast<Eigen::Index>(rng.next_u64() % (n / 2 + 1));
  const auto n_in = static_cast<Eigen::Index>(1 + rng.next_u64() % n);

  Mat l(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) l(i, j) = rng.uniform(-1.0, 1.0);
  QpProblem p;
  p.P = l * l.transpose() + 0.1 * Mat::Identity(n, n);
  p.q = Vec(n);
  for (Eigen::Index i = 0; i < n; ++i) p.q(i) = rng.uniform(-2.0, 2.0);

  Vec z0(n);
  for (Eigen::Index i = 0; i < n; ++i) z0(i) = rng.uniform(-1.0, 1.0);

  const Eigen::Index m = n_eq + n_in;
  p.A = Mat(m, n);
  p.lo = Vec(m);
  p.hi = Vec(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) p.A(i, j) = rng.uniform(-1.0, 1.0);
    const double v = p.A.row(i).dot(z0);
    if (i < n_eq) {
      p.lo(i) = v;
      p.hi(i) = v;
    } else {
      p.lo(i) = v - rng.uniform(0.05, 1.5);
      p.hi(i) = v + rng.uniform(0.05, 1.5);
    }
  }
  return p;
}

/// Dense KKT solve on the active set reported by a solution; the oracle for
/// checking the ADMM result. Returns the primal it computes.
inline Vec kkt_oracle(const QpProblem& p, const QpSolution& sol) {
  std::vector<Eigen::Index> act;
  std::vector<double> b;
  for (Eigen::Index i = 0; i < p.num_cons(); ++i) {
    if (p.lo(i) == p.hi(i)) {
      act.push_back(i);
      b.push_back(p.lo(i));
    } else if (sol.dual(i) < -1e-9) {
      act.push_back(i);
      b.push_back(p.lo(i));
    } else if (sol.dual(i) > 1e-9) {
      act.push_back(i);
      b.push_back(p.hi(i));
    }
  }
  const auto n = p.num_vars();
  const auto k = static_cast<Eigen::Index>(act.size());
  Mat kkt = Mat::Zero(n + k, n + k);
  kkt.topLeftCorner(n, n) = p.P;
  Vec rhs(n + k);
  rhs.head(n) = -p.q;
  for (Eigen::Index r = 0; r < k; ++r) {
    kkt.block(n + r, 0, 1, n) = p.A.row(act[static_cast<size_t>(r)]);
    kkt.block(0, n + r, n, 1) = p.A.row(act[static_cast<size_t>(r)]).transpose();
    rhs(n + r) = b[static_cast<size_t>(r)];
  }
  return kkt.fullPivLu().solve(rhs).head(n);
}

}  // namespace dpclab::testing
