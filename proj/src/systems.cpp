#include "dpclab/systems.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

namespace dpclab {

namespace {

void check_quadruple(const Mat& A, const Mat& B, const Mat& C, const Mat& D,
                     const char* what) {
  std::ostringstream msg;
  if (A.rows() != A.cols()) {
    msg << what << ": A must be square, got " << A.rows() << "x" << A.cols();
    throw std::invalid_argument(msg.str());
  }
  if (B.rows() != A.rows()) {
    msg << what << ": B has " << B.rows() << " rows, expected " << A.rows();
    throw std::invalid_argument(msg.str());
  }
  if (C.cols() != A.cols()) {
    msg << what << ": C has " << C.cols() << " cols, expected " << A.cols();
    throw std::invalid_argument(msg.str());
  }
  if (D.rows() != C.rows() || D.cols() != B.cols()) {
    msg << what << ": D must be " << C.rows() << "x" << B.cols() << ", got "
        << D.rows() << "x" << D.cols();
    throw std::invalid_argument(msg.str());
  }
  if (!A.allFinite() || !B.allFinite() || !C.allFinite() || !D.allFinite()) {
    msg << what << ": non-finite matrix entries";
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

void ContinuousLTI::validate() const { check_quadruple(A, B, C, D, "ContinuousLTI"); }

void DiscreteLTI::validate() const {
  check_quadruple(A, B, C, D, "DiscreteLTI");
  if (!(ts > 0.0)) throw std::invalid_argument("DiscreteLTI: ts must be > 0");
}

Eigen::Vector2d two_tank_derivative(const Eigen::Vector2d& x, double u,
                                    TankDiagnostics* diag) {
  double x1 = x(0);
  double x2 = x(1);
  if (x1 < 0.0 || x2 < 0.0) {
    if (diag != nullptr) ++diag->clamp_events;
    x1 = std::max(x1, 0.0);
    x2 = std::max(x2, 0.0);
  }
  const double s1 = std::sqrt(x1);
  const double s2 = std::sqrt(x2);
  return {-kTankOutflow1 * s1 + kTankPumpGain * u,
          kTankOutflow1 * s1 - kTankOutflow2 * s2};
}

ContinuousLTI linearize_frozen(const Eigen::Vector2d& x_nom) {
  if (!(x_nom(0) > 0.0) || !(x_nom(1) > 0.0)) {
    throw std::invalid_argument("linearize_frozen: nominal levels must be > 0");
  }
  const double th1 = 1.0 / std::sqrt(x_nom(0));
  const double th2 = 1.0 / std::sqrt(x_nom(1));
  ContinuousLTI sys;
  sys.A = Mat{{-kTankOutflow1 * th1, 0.0}, {kTankOutflow1 * th1, -kTankOutflow2 * th2}};
  sys.B = Mat{{kTankPumpGain}, {0.0}};
  sys.C = Mat{{0.0, 1.0}};
  sys.D = Mat::Zero(1, 1);
  return sys;
}

DiscreteLTI zoh_discretize(const ContinuousLTI& sys, double ts) {
  sys.validate();
  if (!(ts > 0.0)) throw std::invalid_argument("zoh_discretize: ts must be > 0");
  const Eigen::Index n = sys.n_x();
  const Eigen::Index m = sys.n_u();
  Mat aug = Mat::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = sys.A * ts;
  aug.topRightCorner(n, m) = sys.B * ts;
  const Mat phi = matrix_exponential(aug);
  if (!phi.allFinite()) {
    throw std::runtime_error("zoh_discretize: matrix exponential is non-finite");
  }
  DiscreteLTI d;
  d.A = phi.topLeftCorner(n, n);
  d.B = phi.topRightCorner(n, m);
  d.C = sys.C;
  d.D = sys.D;
  d.ts = ts;
  return d;
}

double derive_sampling_time(double fastest_pole_rad_s, int factor) {
  if (!(fastest_pole_rad_s > 0.0)) {
    throw std::invalid_argument("derive_sampling_time: pole frequency must be > 0");
  }
  if (factor <= 0) {
    throw std::invalid_argument("derive_sampling_time: factor must be > 0");
  }
  return 2.0 * std::numbers::pi / (factor * fastest_pole_rad_s);
}

OTRep build_ot_representation(const DiscreteLTI& sys, int horizon) {
  sys.validate();
  if (horizon < 1) {
    throw std::invalid_argument("build_ot_representation: horizon must be >= 1");
  }
  const Eigen::Index nx = sys.n_x();
  const Eigen::Index nu = sys.n_u();
  const Eigen::Index ny = sys.n_y();
  OTRep rep;
  rep.horizon = horizon;
  rep.O = Mat::Zero(horizon * ny, nx);
  rep.T = Mat::Zero(horizon * ny, horizon * nu);
  std::vector<Mat> c_ak(horizon);  // c_ak[i] = C * A^i
  c_ak[0] = sys.C;
  for (int i = 1; i < horizon; ++i) c_ak[i] = c_ak[i - 1] * sys.A;
  for (int i = 0; i < horizon; ++i) {
    rep.O.middleRows(i * ny, ny) = c_ak[i];
    rep.T.block(i * ny, i * nu, ny, nu) = sys.D;
    for (int k = 0; k < i; ++k) {
      rep.T.block(i * ny, k * nu, ny, nu) = c_ak[i - k - 1] * sys.B;
    }
  }
  return rep;
}

OTRep residual_ot(const DiscreteLTI& sys, const DiscreteLTI& model, int horizon) {
  if (sys.n_u() != model.n_u() || sys.n_y() != model.n_y() || sys.n_x() != model.n_x()) {
    throw std::invalid_argument("residual_ot: plant and model dimensions differ");
  }
  const OTRep full = build_ot_representation(sys, horizon);
  const OTRep part = build_ot_representation(model, horizon);
  OTRep rep;
  rep.horizon = horizon;
  rep.O = full.O - part.O;
  rep.T = full.T - part.T;
  return rep;
}

std::optional<Equilibrium> lti_equilibrium(const DiscreteLTI& sys, const Vec& y_target) {
  sys.validate();
  const Eigen::Index nx = sys.n_x();
  const Eigen::Index nu = sys.n_u();
  const Eigen::Index ny = sys.n_y();
  if (y_target.size() != ny) {
    throw std::invalid_argument("lti_equilibrium: y_target size mismatch");
  }
  Mat lhs(nx + ny, nx + nu);
  lhs.topLeftCorner(nx, nx) = Mat::Identity(nx, nx) - sys.A;
  lhs.topRightCorner(nx, nu) = -sys.B;
  lhs.bottomLeftCorner(ny, nx) = sys.C;
  lhs.bottomRightCorner(ny, nu) = sys.D;
  Vec rhs = Vec::Zero(nx + ny);
  rhs.tail(ny) = y_target;
  Eigen::FullPivLU<Mat> lu(lhs);
  lu.setThreshold(1e-10);
  if (lu.rank() < nx + ny) return std::nullopt;
  Vec sol = lu.solve(rhs);
  if (!sol.allFinite()) return std::nullopt;
  return Equilibrium{sol.head(nx), sol.tail(nu)};
}

Equilibrium two_tank_equilibrium(double level2) {
  if (!(level2 >= 0.0)) {
    throw std::invalid_argument("two_tank_equilibrium: level must be >= 0");
  }
  // Zero derivatives: outflow1*sqrt(x1) = outflow2*sqrt(x2) = pump_gain*u.
  const double ratio = kTankOutflow2 / kTankOutflow1;
  const double x1 = ratio * ratio * level2;
  const double u = kTankOutflow1 * std::sqrt(x1) / kTankPumpGain;
  Equilibrium eq;
  eq.x = Vec{{x1, level2}};
  eq.u = Vec{{u}};
  return eq;
}

LinearPlant::LinearPlant(DiscreteLTI sys) : sys_(std::move(sys)) {
  sys_.validate();
  if (sys_.n_u() != 1 || sys_.n_y() != 1) {
    throw std::invalid_argument("LinearPlant: expected a SISO system");
  }
  if (sys_.D.cwiseAbs().maxCoeff() != 0.0) {
    throw std::invalid_argument("LinearPlant: direct feedthrough is not supported");
  }
  x_ = Vec::Zero(sys_.n_x());
}

void LinearPlant::reset(const Vec& x0) {
  if (x0.size() != sys_.n_x()) {
    throw std::invalid_argument("LinearPlant::reset: state size mismatch");
  }
  x_ = x0;
}

void LinearPlant::apply(double u) {
  x_ = sys_.A * x_ + sys_.B * Vec::Constant(1, u);
  if (!x_.allFinite()) throw std::runtime_error("LinearPlant: state diverged");
}

std::unique_ptr<PlantSim> LinearPlant::clone() const {
  return std::make_unique<LinearPlant>(*this);
}

TwoTankPlant::TwoTankPlant(double ts, int substeps) : ts_(ts), substeps_(substeps) {
  if (!(ts > 0.0)) throw std::invalid_argument("TwoTankPlant: ts must be > 0");
  if (substeps < 1) throw std::invalid_argument("TwoTankPlant: substeps must be >= 1");
  x_ = Vec::Zero(2);
}

void TwoTankPlant::reset(const Vec& x0) {
  if (x0.size() != 2) throw std::invalid_argument("TwoTankPlant::reset: need 2 levels");
  x_ = x0;
}

void TwoTankPlant::apply(double u) {
  const double h = ts_ / substeps_;
  DerivativeFn f = [this](const Vec& x, const Vec& uv) -> Vec {
    return two_tank_derivative(Eigen::Vector2d(x(0), x(1)), uv(0), &diag_);
  };
  Vec uv = Vec::Constant(1, u);
  for (int i = 0; i < substeps_; ++i) {
    x_ = rk4_step(f, x_, uv, h);
    // Physical levels cannot go below empty.
    for (int j = 0; j < 2; ++j) {
      if (x_(j) < 0.0) {
        x_(j) = 0.0;
        ++diag_.clamp_events;
      }
    }
  }
  if (!x_.allFinite()) throw std::runtime_error("TwoTankPlant: state diverged");
}

std::unique_ptr<PlantSim> TwoTankPlant::clone() const {
  return std::make_unique<TwoTankPlant>(*this);
}

}  // namespace dpclab
