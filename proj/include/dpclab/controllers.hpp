#pragma once

#include <deque>
#include <memory>

#include "dpclab/hankel.hpp"
#include "dpclab/qp.hpp"
#include "dpclab/systems.hpp"

namespace dpclab {

enum class Variant { Mpc, Deepc, SdMpc, RSdMpc };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

enum class SigmaPenalty { L1, Quadratic };

struct Hyperparams {
  double q = 1e4;        // output tracking weight, Q = q I
  double r = 1e-3;       // input effort weight, R = r I
  int n_fut = 5;         // prediction horizon N
  int t_ini = 5;         // past window
  double lambda_g = 1.0;
  double lambda_y = 1e7;
  int t_d = 200;         // collection length
  bool sigma_enabled = true;
  SigmaPenalty sigma_penalty = SigmaPenalty::L1;  // DeePC only; the combined
                                                  // formulations always use
                                                  // the squared penalty
  void validate() const;
};

struct ConstraintSets {
  double u_lo = 0.0, u_hi = 22.0;    // pump voltage
  double y_lo = 0.0, y_hi = 100.0;   // tank-2 level
  bool x_bounds_enabled = true;      // model-state box, combined variants only
  double x_lo = 0.0, x_hi = 100.0;
  void validate() const;
};

/// Tracking QP over the parametric model alone: decision variables
/// (u, x, y) over the horizon with the dynamics and x0 as equalities.
QpProblem formulate_mpc(const DiscreteLTI& model, const Mat& ref, const Vec& x0,
                        const Hyperparams& hp, const ConstraintSets& cons);

/// Hankel-matrix tracking QP: decision variables (g, u, y, sigma_y) with the
/// stacked data equations; sigma_y enters only the past-output rows.
QpProblem formulate_deepc(const TrajectoryDataset& data, const Mat& ref,
                          const Mat& u_ini, const Mat& y_ini, const Hyperparams& hp,
                          const ConstraintSets& cons);

/// Combined formulation: parametric model equalities plus residual Hankel
/// equations sharing the input, with the output-sum constraint
/// y_k = y_model_k + y_residual_k.
QpProblem formulate_sdmpc(const DiscreteLTI& model, const TrajectoryDataset& data,
                          const Mat& ref, const Vec& x0_model, const Mat& u_ini,
                          const Mat& y_ini_d, const Hyperparams& hp,
                          const ConstraintSets& cons);

/// Residual data collection. Draws a seeded uniform input over
/// [u_lo, u_hi], requires persistency of excitation of order
/// t_ini + n_fut + n_x (retrying with a bumped seed up to 10 times), runs the
/// plant from its current state, and derives the residual sequence per
/// variant:
///   SdMpc  - the model propagates its own state,
///   RSdMpc - the model state is synchronized to the measured plant state
///            each step before propagation,
///   Deepc  - raw outputs, no model contribution.
TrajectoryDataset collect_dataset(PlantSim& plant, const DiscreteLTI& model,
                                  Variant variant, const Hyperparams& hp,
                                  double u_lo, double u_hi, std::uint64_t seed);

struct StepResult {
  double u0 = 0.0;
  Vec u_plan;       // planned inputs over the horizon
  Vec y_pred;       // predicted combined outputs over the horizon
  double y_model = 0.0;  // first model output, used for the residual update
  QpSolution::Status status = QpSolution::Status::MaxIters;
  int qp_iters = 0;
  double solve_ms = 0.0;
  bool feasible = false;
};

/// One receding-horizon controller instance: rolling u_ini / y_ini buffers,
/// the parametric-model state, and a persistent solver for warm starts.
class Controller {
 public:
  Controller(Variant variant, DiscreteLTI model,
             std::shared_ptr<const TrajectoryDataset> data, Hyperparams hp,
             ConstraintSets cons, QpSettings solver_settings = {});

  Variant variant() const { return variant_; }
  const Hyperparams& hyperparams() const { return hp_; }
  bool warmed_up() const;

  void set_model_state(const Vec& x);
  const Vec& model_state() const { return x_model_; }

  /// Logs one applied input / measured output pair: shifts the buffers (the
  /// residual entry uses the model output at the applied input) and advances
  /// the model state per the variant's update rule. Used both to warm the
  /// buffers before the loop and after every step with the input that was
  /// actually applied, so a fallback input keeps the controller consistent.
  void record_sample(double u, double y, const Vec& x_now);

  /// One receding-horizon solve: formulates the variant's problem from the
  /// current buffers and measurement and solves it warm-started. Follow with
  /// record_sample(applied input, y, x) to advance the controller state.
  StepResult step(double y, const Vec& x, const Mat& ref_window);

  /// Most recent formulation, for offline dumps after a failed step.
  const QpProblem& last_problem() const { return last_problem_; }

  const std::deque<double>& u_buffer() const { return u_ini_; }
  const std::deque<double>& y_buffer() const { return y_ini_; }

 private:
  QpProblem formulate(const Vec& x, const Mat& ref_window) const;
  Mat buffer_matrix(const std::deque<double>& buf) const;

  Variant variant_;
  DiscreteLTI model_;
  std::shared_ptr<const TrajectoryDataset> data_;
  Hyperparams hp_;
  ConstraintSets cons_;
  QpSettings settings_;
  QpSolver solver_;
  std::deque<double> u_ini_, y_ini_;
  Vec x_model_;
  QpProblem last_problem_;
};

}  // namespace dpclab
