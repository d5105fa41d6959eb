#include "dpclab/numerics.hpp"

#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

namespace dpclab {

bool all_finite(const Mat& m) { return m.allFinite(); }

Mat matrix_exponential(const Mat& m) {
  if (m.rows() != m.cols()) {
    std::ostringstream msg;
    msg << "matrix_exponential: input must be square, got " << m.rows() << "x"
        << m.cols();
    throw std::invalid_argument(msg.str());
  }
  if (!m.allFinite()) {
    throw std::invalid_argument("matrix_exponential: input has non-finite entries");
  }
  return m.exp();
}

Eigen::Index numerical_rank(const Mat& m, double tol, RankMethod method) {
  if (tol <= 0.0) {
    throw std::invalid_argument("numerical_rank: tol must be > 0");
  }
  if (m.size() == 0) return 0;
  if (method == RankMethod::Svd) {
    Eigen::JacobiSVD<Mat> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) <= 0.0) return 0;
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      if (sv(i) > tol * sv(0)) ++r;
    }
    return r;
  }
  Eigen::ColPivHouseholderQR<Mat> qr(m);
  qr.setThreshold(tol);
  return qr.rank();
}

Vec rk4_step(const DerivativeFn& f, const Vec& x, const Vec& u, double h) {
  if (h <= 0.0) {
    throw std::invalid_argument("rk4_step: step size must be > 0");
  }
  auto eval = [&](const Vec& xi) {
    Vec d = f(xi, u);
    if (!d.allFinite()) {
      throw IntegrationError("rk4_step: derivative is non-finite", xi);
    }
    return d;
  };
  const Vec k1 = eval(x);
  const Vec k2 = eval(x + 0.5 * h * k1);
  const Vec k3 = eval(x + 0.5 * h * k2);
  const Vec k4 = eval(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace dpclab
