#include "dpclab/experiments.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "dpclab/textio.hpp"

namespace dpclab {

std::vector<double> generate_reference(const ReferenceRecipe& recipe, int length,
                                       double ts, double y_lo, double y_hi) {
  if (length < 1) throw std::invalid_argument("generate_reference: length must be >= 1");
  if (!(ts > 0.0)) throw std::invalid_argument("generate_reference: ts must be > 0");
  const double target = recipe.ramp_s > 0.0 ? recipe.target : recipe.start;
  const double t_ramp = recipe.hold_start_s;
  const double t_hold = t_ramp + recipe.ramp_s;
  const double t_sin = t_hold + recipe.hold_target_s;
  std::vector<double> r(static_cast<size_t>(length));
  for (int k = 0; k < length; ++k) {
    const double t = k * ts;
    double v;
    if (t < t_ramp || recipe.ramp_s <= 0.0) {
      v = t < t_ramp ? recipe.start : target;
    } else if (t < t_hold) {
      const double tau = (t - t_ramp) / recipe.ramp_s;
      const double ease = tau * tau * (3.0 - 2.0 * tau);
      v = recipe.start + (target - recipe.start) * ease;
    } else if (t < t_sin || recipe.sin_period_s <= 0.0) {
      v = target;
    } else {
      v = target + recipe.sin_amplitude *
                       std::sin(2.0 * std::numbers::pi * (t - t_sin) / recipe.sin_period_s);
    }
    v += recipe.shift;
    if (v < y_lo || v > y_hi) {
      std::ostringstream msg;
      msg << "generate_reference: value " << v << " at step " << k
          << " exceeds the output bounds [" << y_lo << ", " << y_hi << "]";
      throw std::invalid_argument(msg.str());
    }
    r[static_cast<size_t>(k)] = v;
  }
  return r;
}

int ScenarioSpec::horizon_steps() const {
  if (steps > 0) return steps;
  return static_cast<int>(std::lround(reference.total_s / ts));
}

const Hyperparams& ScenarioSpec::hp(Variant v) const {
  const auto it = hyperparams.find(v);
  if (it == hyperparams.end()) {
    throw std::invalid_argument("scenario '" + name + "' has no hyperparameters for " +
                                variant_name(v));
  }
  return it->second;
}

void ScenarioSpec::validate() const {
  if (!(ts > 0.0)) throw std::invalid_argument("scenario: ts must be > 0");
  if (horizon_steps() < 1) throw std::invalid_argument("scenario: no steps to run");
  if (rk4_substeps < 1) throw std::invalid_argument("scenario: rk4_substeps must be >= 1");
  constraints.validate();
  for (const auto& [v, h] : hyperparams) h.validate();
  auto check_point = [](const char* what, const Eigen::Vector2d& p) {
    if (!(p(0) > 0.0) || !(p(1) > 0.0) || p(0) > 100.0 || p(1) > 100.0) {
      throw std::invalid_argument(std::string("scenario: ") + what +
                                  " must lie in (0, 100] cm");
    }
  };
  if (plant_kind == PlantKind::Linear) {
    check_point("operating point", operating_point);
    check_point("data point", data_point);
  }
  if (model_kind == ModelKind::Linearized) check_point("model point", model_point);
  if (model_kind == ModelKind::Exact && plant_kind != PlantKind::Linear) {
    throw std::invalid_argument("scenario: an exact model requires the linear plant");
  }
  if (collection.y_lo >= collection.y_hi && collection.u_lo >= collection.u_hi) {
    throw std::invalid_argument("scenario: empty collection range");
  }
  // The reference must fit the output constraints; generating it validates.
  generate_reference(reference, horizon_steps(), ts, constraints.y_lo, constraints.y_hi);
}

namespace {

Hyperparams table_lti(int t_ini) {
  Hyperparams hp;
  hp.q = 1e4;
  hp.r = 1e-3;
  hp.n_fut = 5;
  hp.t_ini = t_ini;
  hp.lambda_g = 1.0;
  hp.lambda_y = 1e7;
  hp.t_d = 200;
  return hp;
}

Hyperparams table_lpv(int t_ini, double lambda_g) {
  Hyperparams hp;
  hp.q = 1e4;
  hp.r = 1e-2;
  hp.n_fut = 5;
  hp.t_ini = t_ini;
  hp.lambda_g = lambda_g;
  hp.lambda_y = 1e7;
  hp.t_d = 200;
  return hp;
}

}  // namespace

ScenarioSpec scenario_preset(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  if (name == "lti-general" || name == "lti-robust" || name == "lti-exact") {
    s.plant_kind = PlantKind::Linear;
    s.ts = 2.69;
    s.operating_point = {15.0, 15.0};
    s.data_point = {15.0, 15.0};
    s.model_point = {10.0, 10.0};
    for (Variant v : {Variant::Mpc, Variant::Deepc, Variant::SdMpc, Variant::RSdMpc}) {
      s.hyperparams[v] = table_lti(5);
    }
    if (name == "lti-robust") {
      s.operating_point = {30.0, 30.0};
    } else if (name == "lti-exact") {
      s.model_kind = ModelKind::Exact;
      // With an exact model the four formulations coincide; the data term
      // carries no information, so its weight is dropped.
      for (auto& [v, h] : s.hyperparams) h.lambda_g = 0.0;
    }
  } else if (name == "lpv-general" || name == "lpv-robust") {
    s.plant_kind = PlantKind::Nonlinear;
    s.ts = 0.69;
    s.model_point = {5.0, 15.0};
    s.hyperparams[Variant::Mpc] = table_lpv(5, 1e4);
    s.hyperparams[Variant::Deepc] = table_lpv(20, 1e4);
    s.hyperparams[Variant::SdMpc] = table_lpv(20, 1e4);
    s.hyperparams[Variant::RSdMpc] = table_lpv(15, 1e4);
    if (name == "lpv-robust") {
      s.reference.shift = 15.0;  // beyond the collected range
    }
  } else {
    throw std::invalid_argument("unknown scenario preset '" + name + "'");
  }
  return s;
}

std::vector<std::string> scenario_preset_names() {
  return {"lti-general", "lti-robust", "lti-exact", "lpv-general", "lpv-robust"};
}

std::unique_ptr<PlantSim> make_operating_plant(const ScenarioSpec& spec) {
  if (spec.plant_kind == PlantKind::Linear) {
    return std::make_unique<LinearPlant>(
        zoh_discretize(linearize_frozen(spec.operating_point), spec.ts));
  }
  return std::make_unique<TwoTankPlant>(spec.ts, spec.rk4_substeps);
}

std::unique_ptr<PlantSim> make_data_plant(const ScenarioSpec& spec) {
  if (spec.plant_kind == PlantKind::Linear) {
    return std::make_unique<LinearPlant>(
        zoh_discretize(linearize_frozen(spec.data_point), spec.ts));
  }
  return std::make_unique<TwoTankPlant>(spec.ts, spec.rk4_substeps);
}

DiscreteLTI make_model(const ScenarioSpec& spec) {
  switch (spec.model_kind) {
    case ModelKind::Linearized:
      return zoh_discretize(linearize_frozen(spec.model_point), spec.ts);
    case ModelKind::Exact:
      return zoh_discretize(linearize_frozen(spec.operating_point), spec.ts);
    case ModelKind::Zero: {
      DiscreteLTI zero;
      zero.A = Mat::Zero(2, 2);
      zero.B = Mat::Zero(2, 1);
      zero.C = Mat::Zero(1, 2);
      zero.D = Mat::Zero(1, 1);
      zero.ts = spec.ts;
      return zero;
    }
  }
  throw std::logic_error("make_model: unreachable");
}

namespace {

/// Steady-state input holding the given level on the collection plant.
double data_plant_equilibrium_input(const ScenarioSpec& spec, double level) {
  if (spec.plant_kind == PlantKind::Nonlinear) return two_tank_equilibrium(level).u(0);
  const auto sys = zoh_discretize(linearize_frozen(spec.data_point), spec.ts);
  const auto eq = lti_equilibrium(sys, Vec::Constant(1, level));
  if (!eq) throw std::runtime_error("collection plant has no steady state");
  return eq->u(0);
}

Vec data_plant_equilibrium_state(const ScenarioSpec& spec, double level) {
  if (spec.plant_kind == PlantKind::Nonlinear) return two_tank_equilibrium(level).x;
  const auto sys = zoh_discretize(linearize_frozen(spec.data_point), spec.ts);
  const auto eq = lti_equilibrium(sys, Vec::Constant(1, level));
  if (!eq) throw std::runtime_error("collection plant has no steady state");
  return eq->x;
}

}  // namespace

std::pair<double, double> collection_input_range(const ScenarioSpec& spec) {
  if (spec.collection.u_lo < spec.collection.u_hi) {
    return {spec.collection.u_lo, spec.collection.u_hi};
  }
  double lo = data_plant_equilibrium_input(spec, spec.collection.y_lo);
  double hi = data_plant_equilibrium_input(spec, spec.collection.y_hi);
  if (lo > hi) std::swap(lo, hi);
  lo = std::max(lo, spec.constraints.u_lo);
  hi = std::min(hi, spec.constraints.u_hi);
  return {lo, hi};
}

TrajectoryDataset collect_for(const ScenarioSpec& spec, Variant variant) {
  const auto [u_lo, u_hi] = collection_input_range(spec);
  auto plant = make_data_plant(spec);
  const double mid = 0.5 * (spec.collection.y_lo + spec.collection.y_hi);
  plant->reset(data_plant_equilibrium_state(spec, mid));
  return collect_dataset(*plant, make_model(spec), variant, spec.hp(variant), u_lo,
                         u_hi, spec.seed);
}

std::string RunLog::to_csv() const {
  std::string out = "k,t,r,u,y,y_model,y_residual,x1,x2,qp_iters,solve_ms,feasible\n";
  for (const auto& rec : records) {
    out += std::to_string(rec.k);
    out += ',';
    out += fmt_double(rec.t);
    out += ',';
    out += fmt_double(rec.r);
    out += ',';
    out += fmt_double(rec.u);
    out += ',';
    out += fmt_double(rec.y);
    out += ',';
    out += fmt_double(rec.y_model);
    out += ',';
    out += fmt_double(rec.y_residual);
    out += ',';
    out += fmt_double(rec.x1);
    out += ',';
    out += fmt_double(rec.x2);
    out += ',';
    out += std::to_string(rec.qp_iters);
    out += ',';
    out += fmt_double(rec.solve_ms);
    out += ',';
    out += rec.feasible ? '1' : '0';
    out += '\n';
  }
  return out;
}

namespace {

struct Segment {
  double t_begin = 0.0, t_end = 0.0;  // [begin, end)
};

RunSummary summarize(const ScenarioSpec& spec, const std::vector<StepRecord>& records) {
  RunSummary s;
  if (records.empty()) return s;
  double acc = 0.0;
  for (const auto& rec : records) {
    const double e = rec.y - rec.r;
    acc += e * e;
    if (!rec.feasible) ++s.flagged_steps;
  }
  s.rmse = std::sqrt(acc / static_cast<double>(records.size()));

  const auto& rr = spec.reference;
  const double plateau_begin = rr.hold_start_s + rr.ramp_s;
  const double sin_begin = plateau_begin + rr.hold_target_s;
  const Segment segs[2] = {{0.0, rr.hold_start_s}, {plateau_begin, sin_begin}};
  for (const auto& seg : segs) {
    const double settle_from = seg.t_begin + 0.75 * (seg.t_end - seg.t_begin);
    for (const auto& rec : records) {
      if (rec.t >= settle_from && rec.t < seg.t_end) {
        s.max_settled_err = std::max(s.max_settled_err, std::abs(rec.y - rec.r));
      }
    }
  }
  const double plateau =
      (rr.ramp_s > 0.0 ? rr.target : rr.start) + rr.shift;
  for (const auto& rec : records) {
    if (rec.t >= rr.hold_start_s && rec.t < sin_begin) {
      s.peak_overshoot = std::max(s.peak_overshoot, rec.y - plateau);
    }
  }
  s.peak_overshoot = std::max(s.peak_overshoot, 0.0);
  return s;
}

}  // namespace

RunLog run_closed_loop(const ScenarioSpec& spec, Variant variant,
                       const StepObserver& observer) {
  spec.validate();
  const Hyperparams& hp = spec.hp(variant);
  const int steps = spec.horizon_steps();
  const std::vector<double> reference =
      generate_reference(spec.reference, steps, spec.ts, spec.constraints.y_lo,
                         spec.constraints.y_hi);

  const DiscreteLTI model = make_model(spec);
  std::shared_ptr<const TrajectoryDataset> data;
  if (variant != Variant::Mpc) {
    data = std::make_shared<const TrajectoryDataset>(collect_for(spec, variant));
  }

  QpSettings qs;
  qs.eps_prim = spec.solver.eps;
  qs.eps_dual = spec.solver.eps;
  qs.max_iters = spec.solver.max_iters;
  qs.rho = spec.solver.rho;
  qs.polish = spec.solver.polish;
  Controller ctrl(variant, model, data, hp, spec.constraints, qs);

  // Plant starts at the first reference level with tank 1 at the model's
  // consistent equilibrium level (physical relation as the fallback when the
  // model has no steady state).
  auto plant = make_operating_plant(spec);
  const double r0 = reference.front();
  Vec x0(2);
  const auto model_eq = lti_equilibrium(model, Vec::Constant(1, r0));
  x0(0) = model_eq ? model_eq->x(0) : two_tank_equilibrium(r0).x(0);
  x0(1) = r0;
  plant->reset(x0);
  ctrl.set_model_state(plant->state());

  // Warm-up: hold the model's equilibrium input for the first reference
  // value while logging real measurements into the buffers.
  const auto [cu_lo, cu_hi] = collection_input_range(spec);
  double u_warm = model_eq ? model_eq->u(0) : 0.5 * (cu_lo + cu_hi);
  u_warm = std::clamp(u_warm, spec.constraints.u_lo, spec.constraints.u_hi);
  for (int k = 0; k < hp.t_ini; ++k) {
    ctrl.record_sample(u_warm, plant->measure(), plant->state());
    plant->apply(u_warm);
  }

  RunLog log;
  log.records.reserve(static_cast<size_t>(steps));
  const Eigen::Index ny = 1;
  double u_prev = u_warm;
  for (int k = 0; k < steps; ++k) {
    Mat ref_window(ny, hp.n_fut);
    for (int j = 0; j < hp.n_fut; ++j) {
      const int idx = std::min(k + j, steps - 1);
      ref_window(0, j) = reference[static_cast<size_t>(idx)];
    }
    const double y = plant->measure();
    const Vec x = plant->state();
    StepResult res;
    try {
      res = ctrl.step(y, x, ref_window);
    } catch (const std::exception& e) {
      log.summary = summarize(spec, log.records);
      throw RunError(std::string("controller failed at step ") + std::to_string(k) +
                         ": " + e.what(),
                     log);
    }
    const double u_applied = res.feasible ? res.u0 : u_prev;  // hold on failure
    ctrl.record_sample(u_applied, y, x);
    if (observer) observer(k, res, x);

    StepRecord rec;
    rec.k = k;
    rec.t = k * spec.ts;
    rec.r = reference[static_cast<size_t>(k)];
    rec.u = u_applied;
    rec.y = y;
    rec.y_model = variant == Variant::Deepc ? 0.0 : res.y_model;
    rec.y_residual = y - rec.y_model;
    rec.x1 = x(0);
    rec.x2 = x.size() > 1 ? x(1) : 0.0;
    rec.qp_iters = res.qp_iters;
    rec.solve_ms = res.solve_ms;
    rec.feasible = res.feasible;
    log.records.push_back(rec);

    try {
      plant->apply(u_applied);
    } catch (const std::exception& e) {
      log.summary = summarize(spec, log.records);
      throw RunError(std::string("plant diverged at step ") + std::to_string(k) + ": " +
                         e.what(),
                     log);
    }
    if (std::abs(plant->measure()) > 1e6) {
      log.summary = summarize(spec, log.records);
      throw RunError("plant output diverged at step " + std::to_string(k), log);
    }
    u_prev = u_applied;
  }
  log.summary = summarize(spec, log.records);
  return log;
}

std::string ComparisonResult::to_csv() const {
  std::string out = "controller,rmse,max_settled_err,peak_overshoot,flagged_steps,status\n";
  for (const auto& row : rows) {
    out += variant_name(row.variant);
    out += ',';
    out += fmt_double(row.summary.rmse);
    out += ',';
    out += fmt_double(row.summary.max_settled_err);
    out += ',';
    out += fmt_double(row.summary.peak_overshoot);
    out += ',';
    out += std::to_string(row.summary.flagged_steps);
    out += ',';
    out += row.ok ? "ok" : ("failed: " + row.error);
    out += '\n';
  }
  return out;
}

const RunSummary& ComparisonResult::summary(Variant v) const {
  for (const auto& row : rows) {
    if (row.variant == v) {
      if (!row.ok) throw std::runtime_error("run for " + variant_name(v) + " failed");
      return row.summary;
    }
  }
  throw std::invalid_argument("no comparison row for " + variant_name(v));
}

ComparisonResult compare_controllers(const ScenarioSpec& spec) {
  ComparisonResult result;
  for (Variant v : {Variant::Mpc, Variant::Deepc, Variant::SdMpc, Variant::RSdMpc}) {
    ComparisonRow row;
    row.variant = v;
    try {
      RunLog log = run_closed_loop(spec, v);
      row.summary = log.summary;
      row.ok = true;
      result.logs.emplace(v, std::move(log));
    } catch (const RunError& e) {
      row.error = e.what();
      row.summary = e.partial_log().summary;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

double rmse(const std::vector<double>& ref, const std::vector<double>& y) {
  if (ref.size() != y.size()) throw std::invalid_argument("rmse: length mismatch");
  if (ref.empty()) throw std::invalid_argument("rmse: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double e = y[i] - ref[i];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(ref.size()));
}

std::string SweepResult::to_csv() const {
  std::string out = "index,q,r,n_fut,t_ini,lambda_g,lambda_y,t_d,rmse,status\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    out += std::to_string(i);
    out += ',';
    out += fmt_double(row.hp.q);
    out += ',';
    out += fmt_double(row.hp.r);
    out += ',';
    out += std::to_string(row.hp.n_fut);
    out += ',';
    out += std::to_string(row.hp.t_ini);
    out += ',';
    out += fmt_double(row.hp.lambda_g);
    out += ',';
    out += fmt_double(row.hp.lambda_y);
    out += ',';
    out += std::to_string(row.hp.t_d);
    out += ',';
    out += row.ok ? fmt_double(row.rmse) : "";
    out += ',';
    out += row.ok ? "ok" : ("failed: " + row.error);
    out += '\n';
  }
  return out;
}

SweepResult sweep_hyperparams(const ScenarioSpec& spec, Variant variant,
                              const std::vector<Hyperparams>& grid) {
  if (grid.empty()) throw std::invalid_argument("sweep_hyperparams: empty grid");
  SweepResult result;
  result.rows.reserve(grid.size());
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < grid.size(); ++i) {
    ScenarioSpec point = spec;
    point.hyperparams[variant] = grid[i];
    SweepRow row;
    row.hp = grid[i];
    try {
      row.rmse = run_closed_loop(point, variant).summary.rmse;
      row.ok = true;
      if (row.rmse < best) {
        best = row.rmse;
        result.best_index = static_cast<int>(i);
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    result.rows.push_back(std::move(row));
  }
  if (result.best_index < 0) throw std::runtime_error("sweep_hyperparams: every grid point failed");
  return result;
}

}  // namespace dpclab
