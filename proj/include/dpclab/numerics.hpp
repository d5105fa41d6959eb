#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>

namespace dpclab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Thrown by rk4_step when the derivative evaluates to a non-finite value;
/// carries the state at which the evaluation failed.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& msg, Vec state)
      : std::runtime_error(msg), state_(std::move(state)) {}
  const Vec& state() const { return state_; }

 private:
  Vec state_;
};

bool all_finite(const Mat& m);

/// Matrix exponential e^M (scaling-and-squaring with Pade approximant).
/// Throws std::invalid_argument for non-square or non-finite input.
Mat matrix_exponential(const Mat& m);

enum class RankMethod { ColumnPivot, Svd };

/// Number of pivots (or singular values) exceeding tol times the largest.
/// Empty matrices have rank 0.
Eigen::Index numerical_rank(const Mat& m, double tol = 1e-9,
                            RankMethod method = RankMethod::ColumnPivot);

using DerivativeFn = std::function<Vec(const Vec& x, const Vec& u)>;

/// One classical 4th-order Runge-Kutta step of size h with the input held
/// constant over the step.
Vec rk4_step(const DerivativeFn& f, const Vec& x, const Vec& u, double h);

}  // namespace dpclab
