#pragma once

#include <memory>
#include <optional>

#include "dpclab/numerics.hpp"

namespace dpclab {

struct ContinuousLTI {
  Mat A, B, C, D;
  void validate() const;
  Eigen::Index n_x() const { return A.rows(); }
  Eigen::Index n_u() const { return B.cols(); }
  Eigen::Index n_y() const { return C.rows(); }
};

struct DiscreteLTI {
  Mat A, B, C, D;
  double ts = 0.0;  // seconds
  void validate() const;
  Eigen::Index n_x() const { return A.rows(); }
  Eigen::Index n_u() const { return B.cols(); }
  Eigen::Index n_y() const { return C.rows(); }
};

/// Cascaded two-tank constants: tank-1/tank-2 outflow coefficients and the
/// pump gain of the inflow valve.
inline constexpr double kTankOutflow1 = 0.904;
inline constexpr double kTankOutflow2 = 0.508;
inline constexpr double kTankPumpGain = 0.258;

struct TankDiagnostics {
  long clamp_events = 0;
};

/// Level derivatives (cm/s) for levels x = (x1, x2) in cm and pump voltage u.
/// Negative levels are clamped to zero before the square root; clamps are
/// counted in diag when provided.
Eigen::Vector2d two_tank_derivative(const Eigen::Vector2d& x, double u,
                                    TankDiagnostics* diag = nullptr);

/// Frozen-parameter linearization of the tank dynamics at the nominal levels
/// x_nom (both components must be positive). The level dependency is
/// evaluated at x_nom and held fixed; no affine offset is added.
ContinuousLTI linearize_frozen(const Eigen::Vector2d& x_nom);

/// Exact zero-order-hold discretization via the exponential of the augmented
/// [[A, B], [0, 0]] block. C and D are copied unchanged.
DiscreteLTI zoh_discretize(const ContinuousLTI& sys, double ts);

/// Sampling time from the rule "factor times the frequency of the fastest
/// pole": Ts = 2*pi / (factor * fastest_pole).
double derive_sampling_time(double fastest_pole_rad_s, int factor = 10);

/// Stacked observability matrix O and lower block-triangular impulse-response
/// matrix T such that y = O x0 + T u over the horizon.
struct OTRep {
  Mat O;  // (h*n_y) x n_x
  Mat T;  // (h*n_y) x (h*n_u)
  int horizon = 0;
};

OTRep build_ot_representation(const DiscreteLTI& sys, int horizon);

/// Elementwise difference of the O-T representations of sys and model.
/// Requires matching input, output and state dimensions.
OTRep residual_ot(const DiscreteLTI& sys, const DiscreteLTI& model, int horizon);

struct Equilibrium {
  Vec x;
  Vec u;
};

/// Steady state (x, u) with output held at y_target; empty when the DC map is
/// singular (e.g. the all-zero quadruple).
std::optional<Equilibrium> lti_equilibrium(const DiscreteLTI& sys, const Vec& y_target);

/// Nonlinear tank steady state holding tank-2 at the given level.
Equilibrium two_tank_equilibrium(double level2);

/// Single-input single-output plant stepped at a fixed sample time. measure()
/// returns the current output before an input is applied (all plants here
/// have no direct feedthrough).
class PlantSim {
 public:
  virtual ~PlantSim() = default;
  virtual void reset(const Vec& x0) = 0;
  virtual Vec state() const = 0;
  virtual double measure() const = 0;
  virtual void apply(double u) = 0;
  virtual double sample_time() const = 0;
  virtual std::unique_ptr<PlantSim> clone() const = 0;
};

class LinearPlant final : public PlantSim {
 public:
  explicit LinearPlant(DiscreteLTI sys);
  void reset(const Vec& x0) override;
  Vec state() const override { return x_; }
  double measure() const override { return (sys_.C * x_)(0); }
  void apply(double u) override;
  double sample_time() const override { return sys_.ts; }
  std::unique_ptr<PlantSim> clone() const override;
  const DiscreteLTI& system() const { return sys_; }

 private:
  DiscreteLTI sys_;
  Vec x_;
};

class TwoTankPlant final : public PlantSim {
 public:
  TwoTankPlant(double ts, int substeps = 10);
  void reset(const Vec& x0) override;
  Vec state() const override { return x_; }
  double measure() const override { return x_(1); }
  void apply(double u) override;
  double sample_time() const override { return ts_; }
  std::unique_ptr<PlantSim> clone() const override;
  long clamp_events() const { return diag_.clamp_events; }

 private:
  double ts_;
  int substeps_;
  Vec x_;
  TankDiagnostics diag_;
};

}  // namespace dpclab
