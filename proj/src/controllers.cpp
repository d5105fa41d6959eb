#include "dpclab/controllers.hpp"

#include <chrono>
#include <sstream>

#include "dpclab/rng.hpp"

namespace dpclab {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Mpc: return "mpc";
    case Variant::Deepc: return "deepc";
    case Variant::SdMpc: return "sdmpc";
    case Variant::RSdMpc: return "rsdmpc";
  }
  throw std::logic_error("variant_name: unreachable");
}

Variant variant_from_name(const std::string& name) {
  if (name == "mpc") return Variant::Mpc;
  if (name == "deepc") return Variant::Deepc;
  if (name == "sdmpc") return Variant::SdMpc;
  if (name == "rsdmpc") return Variant::RSdMpc;
  throw std::invalid_argument("unknown controller '" + name +
                              "' (expected mpc|deepc|sdmpc|rsdmpc)");
}

void Hyperparams::validate() const {
  if (q < 0.0 || r < 0.0 || lambda_g < 0.0 || lambda_y < 0.0) {
    throw std::invalid_argument("Hyperparams: weights must be >= 0");
  }
  if (n_fut < 1) throw std::invalid_argument("Hyperparams: n_fut must be >= 1");
  if (t_ini < 1) throw std::invalid_argument("Hyperparams: t_ini must be >= 1");
  if (t_d < t_ini + n_fut) {
    throw std::invalid_argument("Hyperparams: t_d must be >= t_ini + n_fut");
  }
}

void ConstraintSets::validate() const {
  if (u_lo > u_hi || y_lo > y_hi || (x_bounds_enabled && x_lo > x_hi)) {
    throw std::invalid_argument("ConstraintSets: lower bound exceeds upper bound");
  }
}

namespace {

Vec flatten_time_major(const Mat& m) {
  Vec out(m.size());
  for (Eigen::Index k = 0; k < m.cols(); ++k) out.segment(k * m.rows(), m.rows()) = m.col(k);
  return out;
}

void add_tracking_cost(QpProblem& p, const Span& y_span, const Mat& ref, double q) {
  const Vec r = flatten_time_major(ref);
  for (Eigen::Index i = 0; i < y_span.size; ++i) {
    p.P(y_span.offset + i, y_span.offset + i) += 2.0 * q;
    p.q(y_span.offset + i) += -2.0 * q * r(i);
  }
}

void add_effort_cost(QpProblem& p, const Span& u_span, double r) {
  for (Eigen::Index i = 0; i < u_span.size; ++i) {
    p.P(u_span.offset + i, u_span.offset + i) += 2.0 * r;
  }
}

/// Identity rows constraining a span to a box.
void add_box_rows(QpProblem& p, Eigen::Index& row, const Span& span, double lo, double hi) {
  for (Eigen::Index i = 0; i < span.size; ++i) {
    p.A(row, span.offset + i) = 1.0;
    p.lo(row) = lo;
    p.hi(row) = hi;
    ++row;
  }
}

void check_dataset(const TrajectoryDataset& data, const Hyperparams& hp) {
  if (data.t_ini != hp.t_ini || data.n_fut != hp.n_fut) {
    std::ostringstream msg;
    msg << "dataset windows (t_ini=" << data.t_ini << ", n_fut=" << data.n_fut
        << ") do not match hyperparameters (t_ini=" << hp.t_ini
        << ", n_fut=" << hp.n_fut << ")";
    throw std::invalid_argument(msg.str());
  }
  if (data.n_g() < 1) throw std::invalid_argument("dataset has no Hankel columns");
}

}  // namespace

QpProblem formulate_mpc(const DiscreteLTI& model, const Mat& ref, const Vec& x0,
                        const Hyperparams& hp, const ConstraintSets& cons) {
  hp.validate();
  cons.validate();
  model.validate();
  const Eigen::Index nx = model.n_x(), nu = model.n_u(), ny = model.n_y();
  const int n = hp.n_fut;
  if (ref.rows() != ny || ref.cols() != n) {
    throw std::invalid_argument("formulate_mpc: reference window must be n_y x N");
  }
  if (x0.size() != nx) throw std::invalid_argument("formulate_mpc: x0 size mismatch");

  QpProblem p;
  const Span su = p.layout.add("u", n * nu);
  const Span sx = p.layout.add("x", (n + 1) * nx);
  const Span sy = p.layout.add("y", n * ny);
  const Eigen::Index nv = p.layout.total();
  const Eigen::Index mrows = nx + n * nx + n * ny + n * nu + n * ny;
  p.P = Mat::Zero(nv, nv);
  p.q = Vec::Zero(nv);
  p.A = Mat::Zero(mrows, nv);
  p.lo = Vec::Zero(mrows);
  p.hi = Vec::Zero(mrows);

  Eigen::Index row = 0;
  // x_0 = x0
  for (Eigen::Index i = 0; i < nx; ++i) {
    p.A(row, sx.offset + i) = 1.0;
    p.lo(row) = x0(i);
    p.hi(row) = x0(i);
    ++row;
  }
  // x_{k+1} - A x_k - B u_k = 0
  for (int k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < nx; ++i) {
      p.A(row, sx.offset + (k + 1) * nx + i) = 1.0;
      for (Eigen::Index j = 0; j < nx; ++j) p.A(row, sx.offset + k * nx + j) = -model.A(i, j);
      for (Eigen::Index j = 0; j < nu; ++j) p.A(row, su.offset + k * nu + j) = -model.B(i, j);
      ++row;
    }
  }
  // y_k - C x_k - D u_k = 0
  for (int k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < ny; ++i) {
      p.A(row, sy.offset + k * ny + i) = 1.0;
      for (Eigen::Index j = 0; j < nx; ++j) p.A(row, sx.offset + k * nx + j) = -model.C(i, j);
      for (Eigen::Index j = 0; j < nu; ++j) p.A(row, su.offset + k * nu + j) = -model.D(i, j);
      ++row;
    }
  }
  add_box_rows(p, row, su, cons.u_lo, cons.u_hi);
  add_box_rows(p, row, sy, cons.y_lo, cons.y_hi);

  add_tracking_cost(p, sy, ref, hp.q);
  add_effort_cost(p, su, hp.r);
  return p;
}

QpProblem formulate_deepc(const TrajectoryDataset& data, const Mat& ref,
                          const Mat& u_ini, const Mat& y_ini, const Hyperparams& hp,
                          const ConstraintSets& cons) {
  hp.validate();
  cons.validate();
  check_dataset(data, hp);
  const Eigen::Index nu = data.n_u(), ny = data.n_y();
  const int n = hp.n_fut, t_ini = hp.t_ini;
  const Eigen::Index ng = data.n_g();
  if (ref.rows() != ny || ref.cols() != n) {
    throw std::invalid_argument("formulate_deepc: reference window must be n_y x N");
  }
  if (u_ini.rows() != nu || u_ini.cols() != t_ini || y_ini.rows() != ny ||
      y_ini.cols() != t_ini) {
    throw std::invalid_argument("formulate_deepc: u_ini/y_ini shape mismatch");
  }

  QpProblem p;
  const Span sg = p.layout.add("g", ng);
  const Span su = p.layout.add("u", n * nu);
  const Span sy = p.layout.add("y", n * ny);
  Span ss{0, 0};
  if (hp.sigma_enabled) ss = p.layout.add("sigma_y", t_ini * ny);
  const Eigen::Index nv = p.layout.total();
  const Eigen::Index mrows =
      t_ini * nu + t_ini * ny + n * nu + n * ny + n * nu + n * ny;
  p.P = Mat::Zero(nv, nv);
  p.q = Vec::Zero(nv);
  p.A = Mat::Zero(mrows, nv);
  p.lo = Vec::Zero(mrows);
  p.hi = Vec::Zero(mrows);

  const Vec u_ini_flat = flatten_time_major(u_ini);
  const Vec y_ini_flat = flatten_time_major(y_ini);

  Eigen::Index row = 0;
  // Up g = u_ini
  p.A.block(row, sg.offset, t_ini * nu, ng) = data.up;
  p.lo.segment(row, t_ini * nu) = u_ini_flat;
  p.hi.segment(row, t_ini * nu) = u_ini_flat;
  row += t_ini * nu;
  // Yp g - sigma = y_ini
  p.A.block(row, sg.offset, t_ini * ny, ng) = data.yp;
  if (hp.sigma_enabled) {
    p.A.block(row, ss.offset, t_ini * ny, t_ini * ny) = -Mat::Identity(t_ini * ny, t_ini * ny);
  }
  p.lo.segment(row, t_ini * ny) = y_ini_flat;
  p.hi.segment(row, t_ini * ny) = y_ini_flat;
  row += t_ini * ny;
  // Uf g - u = 0
  p.A.block(row, sg.offset, n * nu, ng) = data.uf;
  p.A.block(row, su.offset, n * nu, n * nu) = -Mat::Identity(n * nu, n * nu);
  row += n * nu;
  // Yf g - y = 0
  p.A.block(row, sg.offset, n * ny, ng) = data.yf;
  p.A.block(row, sy.offset, n * ny, n * ny) = -Mat::Identity(n * ny, n * ny);
  row += n * ny;
  add_box_rows(p, row, su, cons.u_lo, cons.u_hi);
  add_box_rows(p, row, sy, cons.y_lo, cons.y_hi);

  add_tracking_cost(p, sy, ref, hp.q);
  add_effort_cost(p, su, hp.r);
  if (hp.sigma_enabled && hp.sigma_penalty == SigmaPenalty::Quadratic) {
    p = add_quadratic_penalty(p, "sigma_y", hp.lambda_y);
  }
  if (hp.lambda_g > 0.0) p = encode_l1(p, "g", hp.lambda_g);
  if (hp.sigma_enabled && hp.sigma_penalty == SigmaPenalty::L1) {
    p = encode_l1(p, "sigma_y", hp.lambda_y);
  }
  return p;
}

QpProblem formulate_sdmpc(const DiscreteLTI& model, const TrajectoryDataset& data,
                          const Mat& ref, const Vec& x0_model, const Mat& u_ini,
                          const Mat& y_ini_d, const Hyperparams& hp,
                          const ConstraintSets& cons) {
  hp.validate();
  cons.validate();
  model.validate();
  check_dataset(data, hp);
  const Eigen::Index nx = model.n_x(), nu = model.n_u(), ny = model.n_y();
  if (data.n_u() != nu || data.n_y() != ny) {
    throw std::invalid_argument("formulate_sdmpc: dataset channels do not match the model");
  }
  const int n = hp.n_fut, t_ini = hp.t_ini;
  const Eigen::Index ng = data.n_g();
  if (ref.rows() != ny || ref.cols() != n) {
    throw std::invalid_argument("formulate_sdmpc: reference window must be n_y x N");
  }
  if (x0_model.size() != nx) throw std::invalid_argument("formulate_sdmpc: x0 size mismatch");
  if (u_ini.rows() != nu || u_ini.cols() != t_ini || y_ini_d.rows() != ny ||
      y_ini_d.cols() != t_ini) {
    throw std::invalid_argument("formulate_sdmpc: u_ini/y_ini shape mismatch");
  }

  QpProblem p;
  const Span su = p.layout.add("u", n * nu);
  const Span sx = p.layout.add("x_m", (n + 1) * nx);
  const Span sg = p.layout.add("g", ng);
  const Span syd = p.layout.add("y_d", n * ny);
  const Span sy = p.layout.add("y", n * ny);
  Span ss{0, 0};
  if (hp.sigma_enabled) ss = p.layout.add("sigma_y", t_ini * ny);
  const Eigen::Index nv = p.layout.total();
  const bool xbox = cons.x_bounds_enabled;
  const Eigen::Index mrows = nx + n * nx + t_ini * nu + t_ini * ny + n * nu +
                             n * ny + n * ny + n * nu + n * ny +
                             (xbox ? n * nx : 0);
  p.P = Mat::Zero(nv, nv);
  p.q = Vec::Zero(nv);
  p.A = Mat::Zero(mrows, nv);
  p.lo = Vec::Zero(mrows);
  p.hi = Vec::Zero(mrows);

  const Vec u_ini_flat = flatten_time_major(u_ini);
  const Vec y_ini_flat = flatten_time_major(y_ini_d);

  Eigen::Index row = 0;
  // x_{m,0} = x0
  for (Eigen::Index i = 0; i < nx; ++i) {
    p.A(row, sx.offset + i) = 1.0;
    p.lo(row) = x0_model(i);
    p.hi(row) = x0_model(i);
    ++row;
  }
  // x_{m,k+1} - A_m x_{m,k} - B_m u_k = 0
  for (int k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < nx; ++i) {
      p.A(row, sx.offset + (k + 1) * nx + i) = 1.0;
      for (Eigen::Index j = 0; j < nx; ++j) p.A(row, sx.offset + k * nx + j) = -model.A(i, j);
      for (Eigen::Index j = 0; j < nu; ++j) p.A(row, su.offset + k * nu + j) = -model.B(i, j);
      ++row;
    }
  }
  // Up g = u_ini
  p.A.block(row, sg.offset, t_ini * nu, ng) = data.up;
  p.lo.segment(row, t_ini * nu) = u_ini_flat;
  p.hi.segment(row, t_ini * nu) = u_ini_flat;
  row += t_ini * nu;
  // Yp g - sigma = y_ini_d
  p.A.block(row, sg.offset, t_ini * ny, ng) = data.yp;
  if (hp.sigma_enabled) {
    p.A.block(row, ss.offset, t_ini * ny, t_ini * ny) = -Mat::Identity(t_ini * ny, t_ini * ny);
  }
  p.lo.segment(row, t_ini * ny) = y_ini_flat;
  p.hi.segment(row, t_ini * ny) = y_ini_flat;
  row += t_ini * ny;
  // Uf g - u = 0 (shared input feeds the model and the data equations)
  p.A.block(row, sg.offset, n * nu, ng) = data.uf;
  p.A.block(row, su.offset, n * nu, n * nu) = -Mat::Identity(n * nu, n * nu);
  row += n * nu;
  // Yf g - y_d = 0
  p.A.block(row, sg.offset, n * ny, ng) = data.yf;
  p.A.block(row, syd.offset, n * ny, n * ny) = -Mat::Identity(n * ny, n * ny);
  row += n * ny;
  // y_k - C_m x_{m,k} - D_m u_k - y_{d,k} = 0
  for (int k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < ny; ++i) {
      p.A(row, sy.offset + k * ny + i) = 1.0;
      for (Eigen::Index j = 0; j < nx; ++j) p.A(row, sx.offset + k * nx + j) = -model.C(i, j);
      for (Eigen::Index j = 0; j < nu; ++j) p.A(row, su.offset + k * nu + j) = -model.D(i, j);
      p.A(row, syd.offset + k * ny + i) = -1.0;
      ++row;
    }
  }
  add_box_rows(p, row, su, cons.u_lo, cons.u_hi);
  add_box_rows(p, row, sy, cons.y_lo, cons.y_hi);
  if (xbox) {
    // stages 1..N; stage 0 is pinned by the initial-state equality
    const Span tail{sx.offset + nx, n * nx};
    add_box_rows(p, row, tail, cons.x_lo, cons.x_hi);
  }

  add_tracking_cost(p, sy, ref, hp.q);
  add_effort_cost(p, su, hp.r);
  if (hp.sigma_enabled) p = add_quadratic_penalty(p, "sigma_y", hp.lambda_y);
  if (hp.lambda_g > 0.0) p = encode_l1(p, "g", hp.lambda_g);
  return p;
}

TrajectoryDataset collect_dataset(PlantSim& plant, const DiscreteLTI& model,
                                  Variant variant, const Hyperparams& hp,
                                  double u_lo, double u_hi, std::uint64_t seed) {
  hp.validate();
  model.validate();
  if (variant == Variant::Mpc) {
    throw std::invalid_argument("collect_dataset: the model-only controller needs no dataset");
  }
  if (u_lo > u_hi) throw std::invalid_argument("collect_dataset: u_lo > u_hi");
  const int t_d = hp.t_d;
  const int pe_order = hp.t_ini + hp.n_fut + static_cast<int>(model.n_x());

  Mat u_d(1, t_d);
  PeResult pe;
  std::uint64_t used_seed = seed;
  bool ok = false;
  for (int attempt = 0; attempt < 10; ++attempt) {
    used_seed = seed + static_cast<std::uint64_t>(attempt);
    Rng rng(used_seed);
    for (int k = 0; k < t_d; ++k) u_d(0, k) = rng.uniform(u_lo, u_hi);
    pe = is_persistently_exciting(u_d, pe_order);
    if (pe.ok) {
      ok = true;
      break;
    }
  }
  if (!ok) {
    throw std::runtime_error("collect_dataset: input not persistently exciting of order " +
                             std::to_string(pe_order) + " after 10 seeds (" + pe.diagnostic + ")");
  }

  Mat y_d(1, t_d), y_dm(1, t_d);
  Vec x_m = plant.state();  // shared initial state with the plant
  for (int k = 0; k < t_d; ++k) {
    const Vec u_k = Vec::Constant(1, u_d(0, k));
    y_d(0, k) = plant.measure();
    if (!std::isfinite(y_d(0, k))) {
      throw std::runtime_error("collect_dataset: plant output non-finite at step " +
                               std::to_string(k));
    }
    switch (variant) {
      case Variant::Deepc:
        y_dm(0, k) = 0.0;
        break;
      case Variant::SdMpc:
        y_dm(0, k) = (model.C * x_m + model.D * u_k)(0);
        x_m = model.A * x_m + model.B * u_k;
        break;
      case Variant::RSdMpc:
        y_dm(0, k) = (model.C * x_m + model.D * u_k)(0);
        x_m = model.A * plant.state() + model.B * u_k;
        break;
      case Variant::Mpc:
        break;
    }
    plant.apply(u_d(0, k));
  }
  return make_dataset(std::move(u_d), std::move(y_d), std::move(y_dm), hp.t_ini,
                      hp.n_fut, plant.sample_time(), model, used_seed,
                      variant_name(variant), pe);
}

Controller::Controller(Variant variant, DiscreteLTI model,
                       std::shared_ptr<const TrajectoryDataset> data, Hyperparams hp,
                       ConstraintSets cons, QpSettings solver_settings)
    : variant_(variant),
      model_(std::move(model)),
      data_(std::move(data)),
      hp_(hp),
      cons_(cons),
      settings_(solver_settings) {
  hp_.validate();
  cons_.validate();
  if (variant_ != Variant::Deepc) model_.validate();
  if (variant_ != Variant::Mpc) {
    if (!data_) throw std::invalid_argument("Controller: data-driven variant needs a dataset");
    check_dataset(*data_, hp_);
  }
  x_model_ = Vec::Zero(model_.n_x() > 0 ? model_.n_x() : 2);
}

bool Controller::warmed_up() const {
  return static_cast<int>(u_ini_.size()) == hp_.t_ini &&
         static_cast<int>(y_ini_.size()) == hp_.t_ini;
}

void Controller::set_model_state(const Vec& x) {
  if (x.size() != x_model_.size()) {
    throw std::invalid_argument("Controller::set_model_state: size mismatch");
  }
  x_model_ = x;
}

void Controller::record_sample(double u, double y, const Vec& x_now) {
  if (variant_ == Variant::RSdMpc) x_model_ = x_now;
  double y_model = 0.0;
  if (variant_ != Variant::Deepc) {
    y_model = (model_.C * x_model_ + model_.D * Vec::Constant(1, u))(0);
  }
  const double y_entry = variant_ == Variant::Deepc ? y : y - y_model;
  u_ini_.push_back(u);
  y_ini_.push_back(y_entry);
  while (static_cast<int>(u_ini_.size()) > hp_.t_ini) u_ini_.pop_front();
  while (static_cast<int>(y_ini_.size()) > hp_.t_ini) y_ini_.pop_front();
  if (variant_ == Variant::Mpc || variant_ == Variant::SdMpc) {
    x_model_ = model_.A * x_model_ + model_.B * Vec::Constant(1, u);
  }
}

Mat Controller::buffer_matrix(const std::deque<double>& buf) const {
  Mat m(1, static_cast<Eigen::Index>(buf.size()));
  Eigen::Index i = 0;
  for (double v : buf) m(0, i++) = v;
  return m;
}

QpProblem Controller::formulate(const Vec& x, const Mat& ref_window) const {
  switch (variant_) {
    case Variant::Mpc:
      return formulate_mpc(model_, ref_window, x, hp_, cons_);
    case Variant::Deepc:
      return formulate_deepc(*data_, ref_window, buffer_matrix(u_ini_),
                             buffer_matrix(y_ini_), hp_, cons_);
    case Variant::SdMpc:
    case Variant::RSdMpc:
      return formulate_sdmpc(model_, *data_, ref_window, x_model_, buffer_matrix(u_ini_),
                             buffer_matrix(y_ini_), hp_, cons_);
  }
  throw std::logic_error("Controller::formulate: unreachable");
}

StepResult Controller::step(double y, const Vec& x, const Mat& ref_window) {
  if (!warmed_up()) {
    throw std::logic_error("Controller::step: buffers not warmed up");
  }
  if (variant_ == Variant::RSdMpc) x_model_ = x;  // state feedback each iteration

  last_problem_ = formulate(x, ref_window);
  const auto t0 = std::chrono::steady_clock::now();
  const QpSolution sol = solver_.solve(last_problem_, settings_);
  const auto t1 = std::chrono::steady_clock::now();

  StepResult res;
  res.status = sol.status;
  res.qp_iters = sol.iters;
  res.solve_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  res.feasible = sol.status == QpSolution::Status::Solved;
  const Span su = last_problem_.layout.span("u");
  const Span sy = last_problem_.layout.span("y");
  res.u_plan = sol.z.segment(su.offset, su.size);
  res.y_pred = sol.z.segment(sy.offset, sy.size);
  res.u0 = res.u_plan(0);
  if (variant_ != Variant::Deepc) {
    res.y_model = (model_.C * x_model_ + model_.D * Vec::Constant(1, res.u0))(0);
  }
  return res;
}

}  // namespace dpclab
