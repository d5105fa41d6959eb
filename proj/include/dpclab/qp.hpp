#pragma once

#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dpclab/numerics.hpp"

namespace dpclab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Span {
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

/// Named, disjoint index ranges mapping decision-variable blocks to their
/// roles (u, x_m, y, y_d, g, sigma_y, l1 slacks).
class VariableLayout {
 public:
  Span add(const std::string& name, Eigen::Index size);
  Span span(const std::string& name) const;
  bool contains(const std::string& name) const;
  Eigen::Index total() const { return total_; }
  const std::vector<std::pair<std::string, Span>>& entries() const { return spans_; }

 private:
  std::vector<std::pair<std::string, Span>> spans_;
  Eigen::Index total_ = 0;
};

/// Convex QP:  minimize 1/2 z'Pz + q'z  subject to lo <= A z <= hi.
/// Equality constraints are rows with lo == hi; +-inf bounds are allowed.
struct QpProblem {
  Mat P;
  Vec q;
  Mat A;
  Vec lo, hi;
  VariableLayout layout;

  Eigen::Index num_vars() const { return P.rows(); }
  Eigen::Index num_cons() const { return A.rows(); }

  /// Cheap structural checks (dimensions, bound ordering, finiteness of P/q/A).
  void basic_checks() const;
  /// basic_checks plus symmetry, an eigenvalue floor of -1e-10 on the
  /// symmetric part, and layout coverage. O(n^3); meant for tests and
  /// formulation-time validation, not the per-step hot path.
  void validate() const;
  /// Matrix-market-style text dump for offline debugging.
  std::string dump() const;
};

/// Epigraph encoding of weight*||v||_1 over a span: appends slack variables s
/// with -s <= v <= s and adds weight to the linear cost of each s. The
/// optimum restricted to the original variables is unchanged.
QpProblem encode_l1(const QpProblem& p, const std::string& span_name, double weight);

/// Adds the quadratic penalty weight*||v||^2 over a span to the objective
/// (the span's diagonal of P gains 2*weight under the 1/2 z'Pz convention).
QpProblem add_quadratic_penalty(const QpProblem& p, const std::string& span_name,
                                double weight);

struct QpSettings {
  double eps_prim = 1e-6;
  double eps_dual = 1e-6;
  int max_iters = 20000;
  double rho = 0.1;
  bool warm_start = true;
  bool polish = false;
  double sigma = 1e-6;        // proximal regularization
  double alpha = 1.6;         // over-relaxation
  int adapt_interval = 25;    // residual-balancing cadence
  int check_interval = 5;     // termination-check cadence
};

struct QpSolution {
  enum class Status { Solved, MaxIters, Infeasible };
  Vec z;
  Vec dual;
  Status status = Status::MaxIters;
  int iters = 0;
  // Scale-relative infinity-norm residuals; Solved guarantees both are below
  // the corresponding eps setting.
  double primal_res = 0.0;
  double dual_res = 0.0;
  bool polished = false;
};

/// ADMM operator-splitting solver. An instance caches the Ruiz equilibration
/// and KKT factorization keyed on (P, A, equality pattern), so re-solving a
/// problem that differs only in q/lo/hi skips the factorization, and caches
/// the previous solution for warm starts. Deterministic: fixed iteration
/// order, no data-dependent parallelism.
class QpSolver {
 public:
  QpSolution solve(const QpProblem& p, const QpSettings& s = {});
  void reset();

 private:
  struct Cache;
  std::shared_ptr<Cache> cache_;
};

/// One-shot convenience wrapper (no caching between calls).
QpSolution solve_qp(const QpProblem& p, const QpSettings& s = {});

}  // namespace dpclab
