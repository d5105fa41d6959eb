#pragma once

#include <functional>
#include <map>
#include <optional>

#include "dpclab/controllers.hpp"

namespace dpclab {

/// Piecewise reference: hold at the start level, smoothstep to the target
/// over the ramp window, hold, then a sinusoid about the target. Durations
/// are in seconds and resampled at the scenario's sample time. A zero ramp
/// window means no transition happens (the sequence stays at the start
/// level), and a zero amplitude flattens the sinusoid.
struct ReferenceRecipe {
  double start = 15.0;         // cm
  double target = 18.0;        // cm
  double hold_start_s = 54.0;
  double ramp_s = 108.0;
  double hold_target_s = 161.0;
  double sin_amplitude = 2.0;  // cm
  double sin_period_s = 161.0;
  double total_s = 538.0;
  double shift = 0.0;          // level offset applied to the whole sequence
};

std::vector<double> generate_reference(const ReferenceRecipe& recipe, int length,
                                       double ts, double y_lo = 0.0,
                                       double y_hi = 100.0);

enum class PlantKind { Linear, Nonlinear };
enum class ModelKind { Linearized, Exact, Zero };

struct SolverOpts {
  double eps = 1e-6;
  int max_iters = 20000;
  double rho = 0.1;
  bool polish = false;
};

struct CollectionSpec {
  double y_lo = 10.0, y_hi = 20.0;  // level range the input excitation targets
  double u_lo = 0.0, u_hi = 0.0;    // explicit input range; equal means derive
};

struct ScenarioSpec {
  std::string name = "custom";
  PlantKind plant_kind = PlantKind::Linear;
  Eigen::Vector2d operating_point{15.0, 15.0};  // plant linearization (linear kind)
  Eigen::Vector2d data_point{15.0, 15.0};       // collection plant linearization
  Eigen::Vector2d model_point{10.0, 10.0};      // parametric-model linearization
  ModelKind model_kind = ModelKind::Linearized;
  double ts = 2.69;
  int steps = 0;  // 0 derives the count from reference.total_s
  int rk4_substeps = 10;
  ReferenceRecipe reference;
  ConstraintSets constraints;
  CollectionSpec collection;
  std::map<Variant, Hyperparams> hyperparams;
  std::uint64_t seed = 1;
  SolverOpts solver;

  int horizon_steps() const;
  const Hyperparams& hp(Variant v) const;
  void validate() const;
};

/// Built-in scenario presets: lti-general, lti-robust, lti-exact,
/// lpv-general, lpv-robust.
ScenarioSpec scenario_preset(const std::string& name);
std::vector<std::string> scenario_preset_names();

std::unique_ptr<PlantSim> make_operating_plant(const ScenarioSpec& spec);
std::unique_ptr<PlantSim> make_data_plant(const ScenarioSpec& spec);
DiscreteLTI make_model(const ScenarioSpec& spec);
/// Input range used during collection; derived from the collection level
/// range through the data plant's steady-state relation unless given.
std::pair<double, double> collection_input_range(const ScenarioSpec& spec);
/// Dataset for one controller variant, collected from the scenario's data
/// plant positioned at the mid-range equilibrium.
TrajectoryDataset collect_for(const ScenarioSpec& spec, Variant variant);

struct StepRecord {
  int k = 0;
  double t = 0.0, r = 0.0, u = 0.0, y = 0.0, y_model = 0.0, y_residual = 0.0;
  double x1 = 0.0, x2 = 0.0;
  int qp_iters = 0;
  double solve_ms = 0.0;
  bool feasible = true;
};

struct RunSummary {
  double rmse = 0.0;
  double max_settled_err = 0.0;  // last quarter of each constant segment
  double peak_overshoot = 0.0;   // above the plateau on the step segment
  int flagged_steps = 0;
};

struct RunLog {
  std::vector<StepRecord> records;
  RunSummary summary;
  std::string to_csv() const;
};

/// Thrown when a closed loop diverges; carries whatever was logged.
class RunError : public std::runtime_error {
 public:
  RunError(const std::string& msg, RunLog partial)
      : std::runtime_error(msg), partial_(std::move(partial)) {}
  const RunLog& partial_log() const { return partial_; }

 private:
  RunLog partial_;
};

using StepObserver =
    std::function<void(int k, const StepResult& result, const Vec& plant_state)>;

/// Warm-up then the receding-horizon loop against the scenario's plant.
/// Infeasible steps fall back to holding the previous input and are flagged.
RunLog run_closed_loop(const ScenarioSpec& spec, Variant variant,
                       const StepObserver& observer = {});

struct ComparisonRow {
  Variant variant = Variant::Mpc;
  bool ok = false;
  RunSummary summary;
  std::string error;
};

struct ComparisonResult {
  std::vector<ComparisonRow> rows;
  std::map<Variant, RunLog> logs;
  std::string to_csv() const;
  const RunSummary& summary(Variant v) const;
};

/// All four controllers on the identical seed and reference.
ComparisonResult compare_controllers(const ScenarioSpec& spec);

double rmse(const std::vector<double>& ref, const std::vector<double>& y);

struct SweepRow {
  Hyperparams hp;
  bool ok = false;
  double rmse = 0.0;
  std::string error;
};

struct SweepResult {
  int best_index = -1;
  std::vector<SweepRow> rows;
  std::string to_csv() const;
};

/// Grid search ranked by RMSE; ties break toward the earlier grid entry.
SweepResult sweep_hyperparams(const ScenarioSpec& spec, Variant variant,
                              const std::vector<Hyperparams>& grid);

}  // namespace dpclab
