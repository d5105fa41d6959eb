#include "dpclab/qp.hpp"

#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <memory>
#include <sstream>

#include "dpclab/textio.hpp"

namespace dpclab {

Span VariableLayout::add(const std::string& name, Eigen::Index size) {
  if (size < 0) throw std::invalid_argument("VariableLayout: negative span size");
  if (contains(name)) throw std::invalid_argument("VariableLayout: duplicate span '" + name + "'");
  Span s{total_, size};
  spans_.emplace_back(name, s);
  total_ += size;
  return s;
}

Span VariableLayout::span(const std::string& name) const {
  for (const auto& [n, s] : spans_) {
    if (n == name) return s;
  }
  throw std::invalid_argument("VariableLayout: unknown span '" + name + "'");
}

bool VariableLayout::contains(const std::string& name) const {
  for (const auto& [n, s] : spans_) {
    if (n == name) return true;
  }
  return false;
}

void QpProblem::basic_checks() const {
  const Eigen::Index n = P.rows();
  if (P.cols() != n) throw std::invalid_argument("QpProblem: P must be square");
  if (q.size() != n) throw std::invalid_argument("QpProblem: q size mismatch");
  if (A.cols() != n && A.rows() != 0) throw std::invalid_argument("QpProblem: A column count mismatch");
  if (lo.size() != A.rows() || hi.size() != A.rows()) {
    throw std::invalid_argument("QpProblem: bound sizes must match constraint rows");
  }
  if (!P.allFinite() || !q.allFinite() || !A.allFinite()) {
    throw std::invalid_argument("QpProblem: non-finite P, q or A");
  }
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    if (std::isnan(lo(i)) || std::isnan(hi(i)) || lo(i) > hi(i)) {
      throw std::invalid_argument("QpProblem: requires lo <= hi at row " + std::to_string(i));
    }
  }
}

void QpProblem::validate() const {
  basic_checks();
  const Eigen::Index n = num_vars();
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, P.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("QpProblem: P is not symmetric");
  }
  if (n > 0) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (P + P.transpose()), Eigen::EigenvaluesOnly);
    const double floor = eig.eigenvalues().minCoeff();
    if (floor < -1e-10 * std::max(1.0, P.cwiseAbs().maxCoeff())) {
      throw std::invalid_argument("QpProblem: P has eigenvalue below the PSD floor: " +
                                  fmt_double(floor));
    }
  }
  if (layout.total() != 0) {
    if (layout.total() != n) {
      throw std::invalid_argument("QpProblem: layout does not cover all variables");
    }
    std::vector<char> covered(static_cast<size_t>(n), 0);
    for (const auto& [name, s] : layout.entries()) {
      for (Eigen::Index i = s.offset; i < s.offset + s.size; ++i) {
        if (i < 0 || i >= n || covered[static_cast<size_t>(i)]) {
          throw std::invalid_argument("QpProblem: overlapping or out-of-range span '" + name + "'");
        }
        covered[static_cast<size_t>(i)] = 1;
      }
    }
  }
}

std::string QpProblem::dump() const {
  std::ostringstream out;
  const Eigen::Index n = num_vars();
  const Eigen::Index m = num_cons();
  auto emit_matrix = [&](const char* name, const Mat& M) {
    Eigen::Index nnz = 0;
    for (Eigen::Index i = 0; i < M.rows(); ++i)
      for (Eigen::Index j = 0; j < M.cols(); ++j)
        if (M(i, j) != 0.0) ++nnz;
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << "% " << name << "\n";
    out << M.rows() << " " << M.cols() << " " << nnz << "\n";
    for (Eigen::Index i = 0; i < M.rows(); ++i)
      for (Eigen::Index j = 0; j < M.cols(); ++j)
        if (M(i, j) != 0.0)
          out << (i + 1) << " " << (j + 1) << " " << fmt_double(M(i, j)) << "\n";
  };
  auto emit_vector = [&](const char* name, const Vec& v) {
    out << "%%MatrixMarket matrix array real general\n";
    out << "% " << name << "\n";
    out << v.size() << " 1\n";
    for (Eigen::Index i = 0; i < v.size(); ++i) out << fmt_double(v(i)) << "\n";
  };
  out << "% qp n=" << n << " m=" << m << "\n";
  for (const auto& [name, s] : layout.entries()) {
    out << "% span " << name << " offset=" << s.offset << " size=" << s.size << "\n";
  }
  emit_matrix("P", P);
  emit_vector("q", q);
  emit_matrix("A", A);
  emit_vector("lo", lo);
  emit_vector("hi", hi);
  return out.str();
}

QpProblem encode_l1(const QpProblem& p, const std::string& span_name, double weight) {
  if (weight < 0.0) throw std::invalid_argument("encode_l1: weight must be >= 0");
  const Span v = p.layout.span(span_name);
  const Eigen::Index n = p.num_vars();
  const Eigen::Index m = p.num_cons();
  const Eigen::Index k = v.size;

  QpProblem out;
  out.layout = p.layout;
  const Span s = out.layout.add("slack_" + span_name, k);
  out.P = Mat::Zero(n + k, n + k);
  out.P.topLeftCorner(n, n) = p.P;
  out.q = Vec::Zero(n + k);
  out.q.head(n) = p.q;
  out.q.segment(s.offset, k).setConstant(weight);
  out.A = Mat::Zero(m + 2 * k, n + k);
  out.A.topLeftCorner(m, n) = p.A;
  out.lo = Vec::Zero(m + 2 * k);
  out.hi = Vec::Zero(m + 2 * k);
  out.lo.head(m) = p.lo;
  out.hi.head(m) = p.hi;
  for (Eigen::Index i = 0; i < k; ++i) {
    // v_i - s_i <= 0 and -v_i - s_i <= 0
    out.A(m + 2 * i, v.offset + i) = 1.0;
    out.A(m + 2 * i, s.offset + i) = -1.0;
    out.lo(m + 2 * i) = -kInf;
    out.hi(m + 2 * i) = 0.0;
    out.A(m + 2 * i + 1, v.offset + i) = -1.0;
    out.A(m + 2 * i + 1, s.offset + i) = -1.0;
    out.lo(m + 2 * i + 1) = -kInf;
    out.hi(m + 2 * i + 1) = 0.0;
  }
  return out;
}

QpProblem add_quadratic_penalty(const QpProblem& p, const std::string& span_name,
                                double weight) {
  if (weight < 0.0) throw std::invalid_argument("add_quadratic_penalty: weight must be >= 0");
  const Span v = p.layout.span(span_name);
  QpProblem out = p;
  for (Eigen::Index i = 0; i < v.size; ++i) {
    out.P(v.offset + i, v.offset + i) += 2.0 * weight;
  }
  return out;
}

// ---------------------------------------------------------------------------
// ADMM solver
// ---------------------------------------------------------------------------

namespace {

inline double eq_boost() {
  static const double v = std::getenv("DPCLAB_EQBOOST") ? atof(std::getenv("DPCLAB_EQBOOST")) : 1e3;
  return v;
}
#define kRhoEqBoost eq_boost()
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kEpsPrimInf = 1e-4;
constexpr int kRuizIters = 10;
constexpr double kPolishDelta = 1e-9;
constexpr int kPolishAttemptInterval = 250;

double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

struct QpSolver::Cache {
  bool valid = false;
  Mat P, A;               // unscaled copies used for structure comparison
  std::vector<char> eq;   // equality-row pattern
  Vec d, e;               // Ruiz scalings (variables, constraints)
  double c = 1.0;         // cost scaling
  Mat Ps;                 // scaled P (dense)
  bool p_diagonal = false;
  Vec ps_diag;            // scaled P diagonal when p_diagonal
  Eigen::SparseMatrix<double> as_sp, as_t_sp;  // scaled A and its transpose
  Mat As;                 // scaled A, dense view for the polish step
  double rho_base = 0.0;
  double rho_scalar = 0.0;  // adapted value, persists across warm re-solves
  Vec rho;                // per-row penalty (scaled space)
  Eigen::LDLT<Mat> kkt;   // factor of Ps + sigma I + As' diag(rho) As
  double sigma = 0.0;
  bool have_prev = false;
  Vec prev_x, prev_y;     // unscaled previous solution for warm starts

  Vec p_mul(const Vec& x) const {
    if (p_diagonal) return ps_diag.cwiseProduct(x);
    return Ps * x;
  }

  void factor() {
    Mat M = Ps;
    M.diagonal().array() += sigma;
    if (As.rows() > 0) {
      const Eigen::SparseMatrix<double> weighted = rho.asDiagonal() * as_sp;
      M += Mat(as_t_sp * weighted);
    }
    kkt.compute(M);
    if (kkt.info() != Eigen::Success) {
      throw std::runtime_error("QpSolver: KKT factorization failed");
    }
  }
};

void QpSolver::reset() { cache_.reset(); }

namespace {

struct Residuals {
  double prim_abs = 0.0;
  double prim_scale = 1.0;
  double dual_abs = 0.0;
  double dual_scale = 1.0;
  double prim_rel() const { return prim_abs / prim_scale; }
  double dual_rel() const { return dual_abs / dual_scale; }
};

Residuals compute_residuals(const QpProblem& p, const Vec& x, const Vec& z, const Vec& y) {
  Residuals r;
  if (p.num_cons() > 0) {
    const Vec ax = p.A * x;
    r.prim_abs = inf_norm(ax - z);
    r.prim_scale = std::max({1.0, inf_norm(ax), inf_norm(z)});
  }
  const Vec px = p.P * x;
  Vec aty = Vec::Zero(p.num_vars());
  if (p.num_cons() > 0) aty.noalias() = p.A.transpose() * y;
  r.dual_abs = inf_norm(px + p.q + aty);
  r.dual_scale = std::max({1.0, inf_norm(px), inf_norm(p.q), inf_norm(aty)});
  return r;
}

}  // namespace

QpSolution QpSolver::solve(const QpProblem& p, const QpSettings& s_in) {
  QpSettings s = s_in;
  if (std::getenv("DPCLAB_ALPHA")) s.alpha = atof(std::getenv("DPCLAB_ALPHA"));
  if (std::getenv("DPCLAB_SIGMA")) s.sigma = atof(std::getenv("DPCLAB_SIGMA"));
  if (std::getenv("DPCLAB_RHO")) s.rho = atof(std::getenv("DPCLAB_RHO"));
  p.basic_checks();
  const Eigen::Index n = p.num_vars();
  const Eigen::Index m = p.num_cons();

  std::vector<char> eq(static_cast<size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) eq[static_cast<size_t>(i)] = p.lo(i) == p.hi(i) ? 1 : 0;

  const bool reuse = cache_ && cache_->valid && cache_->sigma == s.sigma &&
                     cache_->rho_base == s.rho && cache_->P.rows() == n &&
                     cache_->A.rows() == m && cache_->eq == eq && cache_->P == p.P &&
                     cache_->A == p.A;
  if (!reuse) {
    cache_ = std::make_shared<Cache>();
    Cache& c = *cache_;
    c.P = p.P;
    c.A = p.A;
    c.eq = eq;
    c.sigma = s.sigma;
    c.rho_base = s.rho;
    // Ruiz equilibration of [[P, A'], [A, 0]].
    c.d = Vec::Ones(n);
    c.e = Vec::Ones(m);
    c.Ps = p.P;
    c.As = p.A;
    for (int it = 0; it < kRuizIters; ++it) {
      Vec dcol(n), erow(m);
      for (Eigen::Index j = 0; j < n; ++j) {
        double nrm = c.Ps.col(j).cwiseAbs().maxCoeff();
        if (m > 0) nrm = std::max(nrm, c.As.col(j).cwiseAbs().maxCoeff());
        dcol(j) = nrm > 0.0 ? 1.0 / std::sqrt(nrm) : 1.0;
      }
      for (Eigen::Index i = 0; i < m; ++i) {
        const double nrm = c.As.row(i).cwiseAbs().maxCoeff();
        erow(i) = nrm > 0.0 ? 1.0 / std::sqrt(nrm) : 1.0;
      }
      c.Ps = dcol.asDiagonal() * c.Ps * dcol.asDiagonal();
      if (m > 0) c.As = erow.asDiagonal() * c.As * dcol.asDiagonal();
      c.d = c.d.cwiseProduct(dcol);
      c.e = c.e.cwiseProduct(erow);
    }
    // Cost scaling from the equilibrated quadratic alone. Folding the linear
    // term in (as some splitting solvers do) collapses the quadratic by
    // orders of magnitude here because the tracking references enter q with
    // weight 2*q_weight*ref.
    double pcol_mean = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) pcol_mean += c.Ps.col(j).cwiseAbs().maxCoeff();
    if (n > 0) pcol_mean /= static_cast<double>(n);
    c.c = 1.0 / std::max(1e-12, pcol_mean);
    c.Ps *= c.c;
    c.p_diagonal = true;
    for (Eigen::Index i = 0; i < n && c.p_diagonal; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i != j && c.Ps(i, j) != 0.0) {
          c.p_diagonal = false;
          break;
        }
      }
    }
    if (c.p_diagonal) c.ps_diag = c.Ps.diagonal();
    c.as_sp = c.As.sparseView();
    c.as_sp.makeCompressed();
    c.as_t_sp = c.as_sp.transpose();
    c.as_t_sp.makeCompressed();
    const double os_boost =
        std::getenv("DPCLAB_OSBOOST") ? atof(std::getenv("DPCLAB_OSBOOST")) : 1.0;
    c.rho_scalar = s.rho;
    c.rho = Vec::Constant(m, s.rho);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (eq[static_cast<size_t>(i)]) {
        c.rho(i) = std::min(s.rho * kRhoEqBoost, kRhoMax);
      } else if (!std::isfinite(p.lo(i)) || !std::isfinite(p.hi(i))) {
        c.rho(i) = std::min(s.rho * os_boost, kRhoMax);
      }
    }
    c.factor();
    c.valid = true;
  }
  Cache& c = *cache_;

  const Vec qs = c.c * c.d.cwiseProduct(p.q);
  Vec los(m), his(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    los(i) = c.e(i) * p.lo(i);
    his(i) = c.e(i) * p.hi(i);
  }
  const double q_norm = inf_norm(p.q);

  // Scaled variables: x_s = D^-1 x, z_s = E z, y_s = c E^-1 y.
  Vec x = Vec::Zero(n), z = Vec::Zero(m), y = Vec::Zero(m);
  if (s.warm_start && c.have_prev && c.prev_x.size() == n && c.prev_y.size() == m) {
    x = c.prev_x.cwiseQuotient(c.d);
    for (Eigen::Index i = 0; i < m; ++i) y(i) = c.c * c.prev_y(i) / c.e(i);
  }
  if (m > 0) {
    z = (c.as_sp * x).cwiseMax(los).cwiseMin(his);
  }

  QpSolution sol;

  double rho_scalar = c.rho_scalar;
  Residuals res;
  bool have_res = false;
  int iter = 0;
  QpSolution::Status status = QpSolution::Status::MaxIters;

  Vec x_u(n), z_u(m), y_u(m);
  auto unscale = [&]() {
    x_u = c.d.cwiseProduct(x);
    for (Eigen::Index i = 0; i < m; ++i) {
      z_u(i) = z(i) / c.e(i);
      y_u(i) = y(i) * c.e(i) / c.c;
    }
  };

  // Residuals of the original problem evaluated from scaled quantities:
  // (Ax - z)_i = (As xs - zs)_i / e_i and
  // (Px + q + A'y)_j = (Ps xs + qs + As' ys)_j / (c d_j).
  auto scaled_residuals = [&]() {
    Residuals r;
    if (m > 0) {
      const Vec axs = c.as_sp * x;
      double pa = 0.0, ps1 = 1.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double axi = axs(i) / c.e(i);
        const double zi = z(i) / c.e(i);
        pa = std::max(pa, std::abs(axi - zi));
        ps1 = std::max({ps1, std::abs(axi), std::abs(zi)});
      }
      r.prim_abs = pa;
      r.prim_scale = ps1;
    }
    const Vec pxs = c.p_mul(x);
    Vec atys = Vec::Zero(n);
    if (m > 0) atys = c.as_t_sp * y;
    double da = 0.0, ds1 = std::max(1.0, q_norm);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double inv = 1.0 / (c.c * c.d(j));
      const double pxj = pxs(j) * inv;
      const double atj = atys(j) * inv;
      da = std::max(da, std::abs(pxj + p.q(j) + atj));
      ds1 = std::max({ds1, std::abs(pxj), std::abs(atj)});
    }
    r.dual_abs = da;
    r.dual_scale = ds1;
    return r;
  };

  // Active-set polish in the equilibrated space; see try_polish below.
  auto try_polish = [&](const Vec& cand_x, const Vec& cand_dual, double prim_now,
                        bool include_degenerate, bool exact_solver, QpSolution& out) {
    // A row is pinned only when the candidate sits within prox of the bound
    // (keeps the pinned system consistent); the dual sign picks the side on
    // the first attempt, and the second attempt also pins zero-dual rows
    // resting on a bound.
    Vec ax_cand;
    if (m > 0) ax_cand = p.A * cand_x;
    const double prox = include_degenerate ? std::max(1e-8, 1e3 * prim_now)
                                           : std::max(1e-8, 100.0 * prim_now);
    auto near_lo = [&](Eigen::Index i) {
      return std::isfinite(p.lo(i)) &&
             std::abs(ax_cand(i) - p.lo(i)) <= prox * std::max(1.0, std::abs(p.lo(i)));
    };
    auto near_hi = [&](Eigen::Index i) {
      return std::isfinite(p.hi(i)) &&
             std::abs(ax_cand(i) - p.hi(i)) <= prox * std::max(1.0, std::abs(p.hi(i)));
    };
    std::vector<Eigen::Index> act;
    std::vector<double> bval;  // scaled bound of each pinned row
    for (Eigen::Index i = 0; i < m; ++i) {
      if (c.eq[static_cast<size_t>(i)]) {
        act.push_back(i);
        bval.push_back(los(i));
      } else if (cand_dual(i) < 0.0 && near_lo(i)) {
        act.push_back(i);
        bval.push_back(los(i));
      } else if (cand_dual(i) > 0.0 && near_hi(i)) {
        act.push_back(i);
        bval.push_back(his(i));
      } else if (include_degenerate && cand_dual(i) == 0.0 && near_lo(i)) {
        act.push_back(i);
        bval.push_back(los(i));
      } else if (include_degenerate && cand_dual(i) == 0.0 && near_hi(i)) {
        act.push_back(i);
        bval.push_back(his(i));
      }
    }
    const Vec x_cand_s = cand_x.cwiseQuotient(c.d);
    Vec sol_s;
    for (int attempt = 0; attempt < 5; ++attempt) {
      const auto k_now = static_cast<Eigen::Index>(act.size());
      if (exact_solver) {
        // Rank-revealing minimum-norm solve of the unregularized pinned KKT;
        // the fallback when the proximal iteration stalls on near-free modes.
        Mat kkt = Mat::Zero(n + k_now, n + k_now);
        kkt.topLeftCorner(n, n) = c.Ps;
        Vec rhs(n + k_now);
        rhs.head(n) = -qs;
        for (Eigen::Index r = 0; r < k_now; ++r) {
          const Eigen::Index i = act[static_cast<size_t>(r)];
          kkt.block(n + r, 0, 1, n) = c.As.row(i);
          kkt.block(0, n + r, n, 1) = c.As.row(i).transpose();
          rhs(n + r) = bval[static_cast<size_t>(r)];
        }
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(kkt);
        sol_s = cod.solve(rhs);
        if (!sol_s.allFinite()) {
          if (std::getenv("DPCLAB_QP_DEBUG")) std::fprintf(stderr, "polish: cod nonfinite\n");
          return false;
        }
      } else if (c.p_diagonal) {
        // Diagonal quadratic: proximal-point rounds through the sparse Schur
        // complement S = G Pt^-1 G' + delta I, one LDLT of S per attempt.
        Eigen::SparseMatrix<double> g_sp(k_now, n);
        {
          std::vector<Eigen::Triplet<double>> trips;
          for (Eigen::Index r = 0; r < k_now; ++r) {
            const Eigen::Index i = act[static_cast<size_t>(r)];
            for (Eigen::SparseMatrix<double>::InnerIterator it(c.as_t_sp, i); it; ++it) {
              trips.emplace_back(r, it.row(), it.value());
            }
          }
          g_sp.setFromTriplets(trips.begin(), trips.end());
        }
        const Vec pt_inv = (c.ps_diag.array() + kPolishDelta).inverse().matrix();
        Mat schur = Mat(g_sp * pt_inv.asDiagonal() * Eigen::SparseMatrix<double>(g_sp.transpose()));
        schur.diagonal().array() += kPolishDelta;
        Eigen::LDLT<Mat> sfac(schur);
        if (sfac.info() != Eigen::Success) return false;
        Vec zs = x_cand_s;
        Vec nus = Vec::Zero(k_now);
        Vec bv = Eigen::Map<const Vec>(bval.data(), k_now);
        for (int round = 0; round < 300; ++round) {
          const Vec a = -qs + kPolishDelta * zs;
          const Vec rhs_nu = g_sp * pt_inv.cwiseProduct(a) - (bv - kPolishDelta * nus);
          const Vec nu_next = sfac.solve(rhs_nu);
          const Vec z_next = pt_inv.cwiseProduct(a - g_sp.transpose() * nu_next);
          const double step = std::max(inf_norm(z_next - zs), inf_norm(nu_next - nus));
          const double ref = std::max({1.0, inf_norm(z_next), inf_norm(nu_next)});
          zs = z_next;
          nus = nu_next;
          if (!zs.allFinite() || !nus.allFinite()) break;
          if (step <= 1e-16 * ref) break;
          if (std::max(inf_norm(zs), inf_norm(nus)) >
              1e9 * std::max(1.0, inf_norm(x_cand_s))) {
            break;
          }
        }
        sol_s.resize(n + k_now);
        sol_s.head(n) = zs;
        sol_s.tail(k_now) = nus;
      } else {
        // Proximal-point iteration on the delta-regularized saddle system,
        // reusing one LU factorization; free directions stay at the ADMM
        // candidate instead of running off along a linear-cost ray.
        Mat kkt = Mat::Zero(n + k_now, n + k_now);
        kkt.topLeftCorner(n, n) = c.Ps;
        kkt.topLeftCorner(n, n).diagonal().array() += kPolishDelta;
        for (Eigen::Index r = 0; r < k_now; ++r) {
          const Eigen::Index i = act[static_cast<size_t>(r)];
          kkt.block(n + r, 0, 1, n) = c.As.row(i);
          kkt.block(0, n + r, n, 1) = c.As.row(i).transpose();
          kkt(n + r, n + r) = -kPolishDelta;
        }
        Eigen::PartialPivLU<Mat> lu(kkt);
        sol_s = Vec::Zero(n + k_now);
        sol_s.head(n) = x_cand_s;
        Vec rhs(n + k_now);
        for (int round = 0; round < 300; ++round) {
          rhs.head(n) = -qs + kPolishDelta * sol_s.head(n);
          for (Eigen::Index r = 0; r < k_now; ++r) {
            rhs(n + r) = bval[static_cast<size_t>(r)] - kPolishDelta * sol_s(n + r);
          }
          Vec next = lu.solve(rhs);
          if (!next.allFinite()) {
            sol_s = next;
            break;
          }
          const double step = inf_norm(next - sol_s);
          const double ref = std::max(1.0, inf_norm(next));
          sol_s = next;
          if (step <= 1e-16 * ref) break;
          // a diverging dual block marks an incompatible pinned set
          if (inf_norm(sol_s) > 1e9 * std::max(1.0, inf_norm(x_cand_s))) break;
        }
      }
      if (!sol_s.allFinite()) {
        if (std::getenv("DPCLAB_QP_DEBUG")) std::fprintf(stderr, "polish: nonfinite kkt\n");
        return false;
      }
      // Consistency of the pinned rows, judged in the equilibrated space.
      double worst = 0.0;
      for (Eigen::Index r = 0; r < k_now; ++r) {
        const Eigen::Index i = act[static_cast<size_t>(r)];
        worst = std::max(worst, std::abs(c.As.row(i).dot(sol_s.head(n)) -
                                         bval[static_cast<size_t>(r)]) /
                                    std::max(1.0, std::abs(bval[static_cast<size_t>(r)])));
      }
      const double cons_tol = 1e-6;
      if (worst > cons_tol) {
        // over-pinned: drop the incompatible inequality rows and retry
        std::vector<Eigen::Index> kept_act;
        std::vector<double> kept_b;
        for (Eigen::Index r = 0; r < k_now; ++r) {
          const Eigen::Index i = act[static_cast<size_t>(r)];
          const double resid_r =
              std::abs(c.As.row(i).dot(sol_s.head(n)) - bval[static_cast<size_t>(r)]) /
              std::max(1.0, std::abs(bval[static_cast<size_t>(r)]));
          if (c.eq[static_cast<size_t>(i)] || resid_r <= cons_tol) {
            kept_act.push_back(i);
            kept_b.push_back(bval[static_cast<size_t>(r)]);
          }
        }
        if (kept_act.size() == act.size() || attempt == 4) {
          if (std::getenv("DPCLAB_QP_DEBUG"))
            std::fprintf(stderr, "polish: inconsistent actives (worst %.3e)\n", worst);
          return false;
        }
        act = std::move(kept_act);
        bval = std::move(kept_b);
        continue;
      }
      // under-pinned: pin any bound the candidate now violates and retry
      const Vec zp_try = c.d.cwiseProduct(sol_s.head(n));
      const Vec ax_try = m > 0 ? Vec(p.A * zp_try) : Vec();
      std::vector<Eigen::Index> added;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (c.eq[static_cast<size_t>(i)]) continue;
        bool pinned = false;
        for (Eigen::Index a : act) {
          if (a == i) {
            pinned = true;
            break;
          }
        }
        if (pinned) continue;
        const double tol_i = 0.01 * s.eps_prim;
        if (std::isfinite(p.lo(i)) &&
            ax_try(i) < p.lo(i) - tol_i * std::max(1.0, std::abs(p.lo(i)))) {
          act.push_back(i);
          bval.push_back(los(i));
          added.push_back(i);
        } else if (std::isfinite(p.hi(i)) &&
                   ax_try(i) > p.hi(i) + tol_i * std::max(1.0, std::abs(p.hi(i)))) {
          act.push_back(i);
          bval.push_back(his(i));
          added.push_back(i);
        }
      }
      if (added.empty()) break;
      if (attempt == 4) {
        if (std::getenv("DPCLAB_QP_DEBUG"))
          std::fprintf(stderr, "polish: active set did not settle\n");
        return false;
      }
    }
    const auto k = static_cast<Eigen::Index>(act.size());
    if (inf_norm(sol_s) > 1e6 * std::max(1.0, inf_norm(cand_x))) {
      if (std::getenv("DPCLAB_QP_DEBUG")) std::fprintf(stderr, "polish: blowup\n");
      return false;
    }

    Vec zp = c.d.cwiseProduct(sol_s.head(n));
    Vec dual = Vec::Zero(m);
    for (Eigen::Index r = 0; r < k; ++r) {
      const Eigen::Index i = act[static_cast<size_t>(r)];
      dual(i) = sol_s(n + r) * c.e(i) / c.c;
    }
    // Wrong-signed multipliers mean a row was pinned that should be free.
    const double sign_tol =
        k > 0 ? 1e-7 * std::max(1.0, dual.cwiseAbs().maxCoeff()) : 0.0;
    for (Eigen::Index r = 0; r < k; ++r) {
      const Eigen::Index i = act[static_cast<size_t>(r)];
      if (c.eq[static_cast<size_t>(i)]) continue;
      const bool lower = bval[static_cast<size_t>(r)] == los(i);
      if ((lower && dual(i) > sign_tol) || (!lower && dual(i) < -sign_tol)) {
        if (std::getenv("DPCLAB_QP_DEBUG"))
          std::fprintf(stderr, "polish: sign reject row %ld dual %.3e (k=%ld)\n",
                       static_cast<long>(i), dual(i), static_cast<long>(k));
        return false;
      }
    }

    double viol = 0.0;
    Vec zcl(m);
    if (m > 0) {
      const Vec ax = p.A * zp;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (std::isfinite(p.lo(i))) viol = std::max(viol, p.lo(i) - ax(i));
        if (std::isfinite(p.hi(i))) viol = std::max(viol, ax(i) - p.hi(i));
      }
      zcl = ax.cwiseMax(p.lo).cwiseMin(p.hi);
    }
    Residuals pres = compute_residuals(p, zp, zcl, dual);
    pres.prim_abs = std::max(pres.prim_abs, viol);
    if (std::getenv("DPCLAB_QP_DEBUG"))
      std::fprintf(stderr, "polish: k=%ld prim_rel=%.3e dual_rel=%.3e viol=%.3e\n",
                   static_cast<long>(k), pres.prim_rel(), pres.dual_rel(), viol);
    if (pres.prim_rel() <= s.eps_prim && pres.dual_rel() <= s.eps_dual) {
      out.z = std::move(zp);
      out.dual = std::move(dual);
      out.primal_res = pres.prim_rel();
      out.dual_res = pres.dual_rel();
      out.polished = true;
      out.status = QpSolution::Status::Solved;
      return true;
    }
    return false;
  };

  for (iter = 1; iter <= s.max_iters; ++iter) {
    Vec rhs = s.sigma * x - qs;
    if (m > 0) rhs.noalias() += c.as_t_sp * (c.rho.cwiseProduct(z) - y);
    const Vec xt = c.kkt.solve(rhs);
    Vec x_next = s.alpha * xt + (1.0 - s.alpha) * x;
    Vec dy;
    if (m > 0) {
      const Vec zt = c.as_sp * xt;
      const Vec zhat = s.alpha * zt + (1.0 - s.alpha) * z;
      const Vec w = zhat + y.cwiseQuotient(c.rho);
      const Vec z_next = w.cwiseMax(los).cwiseMin(his);
      // y+ = rho (w - z+): rows untouched by the projection get an exactly
      // zero dual, which is what the polish active-set detection relies on.
      const Vec y_next = c.rho.cwiseProduct(w - z_next);
      dy = y_next - y;
      y = y_next;
      z = z_next;
    }
    x = std::move(x_next);

    const bool check_now = (iter % s.check_interval == 0) || iter == s.max_iters;
    if (check_now) {
      res = scaled_residuals();
      have_res = true;
      if (std::getenv("DPCLAB_QP_TRACE") && iter % 200 == 0)
        std::fprintf(stderr, "it=%d pr=%.2e dr=%.2e rho=%.2e\n", iter, res.prim_rel(),
                     res.dual_rel(), rho_scalar);
      if (res.prim_rel() <= s.eps_prim && res.dual_rel() <= s.eps_dual) {
        status = QpSolution::Status::Solved;
        break;
      }
      // Once the iterate is in the neighborhood, a successful polish ends
      // the run early; ADMM alone closes the last orders of magnitude slowly.
      if (s.polish && iter % kPolishAttemptInterval == 0 &&
          res.prim_rel() <= 1e4 * s.eps_prim && res.dual_rel() <= 1e4 * s.eps_dual) {
        unscale();
        QpSolution candidate;
        if (try_polish(x_u, y_u, res.prim_abs, false, false, candidate) ||
            try_polish(x_u, y_u, res.prim_abs, true, false, candidate)) {
          sol = std::move(candidate);
          sol.iters = iter;
          c.prev_x = sol.z;
          c.prev_y = sol.dual;
          c.have_prev = true;
          return sol;
        }
      }
      // Primal infeasibility certificate from the dual update direction.
      if (m > 0 && dy.size() == m) {
        Vec dy_u(m);
        for (Eigen::Index i = 0; i < m; ++i) dy_u(i) = dy(i) * c.e(i) / c.c;
        const double dn = inf_norm(dy_u);
        if (dn > 1e-10) {
          // (A' w)_j = (As' (E^-1 w))_j / d_j with w = dy unscaled
          Vec einv_w(m);
          for (Eigen::Index i = 0; i < m; ++i) einv_w(i) = dy_u(i) / c.e(i);
          const Vec at_w = c.as_t_sp * einv_w;
          double at_dy = 0.0;
          for (Eigen::Index j = 0; j < n; ++j) at_dy = std::max(at_dy, std::abs(at_w(j) / c.d(j)));
          double support = 0.0;
          bool bounded_support = true;
          for (Eigen::Index i = 0; i < m; ++i) {
            const double pos = std::max(dy_u(i), 0.0);
            const double neg = std::min(dy_u(i), 0.0);
            if (pos > kEpsPrimInf * dn && !std::isfinite(p.hi(i))) bounded_support = false;
            if (neg < -kEpsPrimInf * dn && !std::isfinite(p.lo(i))) bounded_support = false;
            if (std::isfinite(p.hi(i))) support += p.hi(i) * pos;
            if (std::isfinite(p.lo(i))) support += p.lo(i) * neg;
          }
          if (bounded_support && at_dy <= kEpsPrimInf * dn && support <= -kEpsPrimInf * dn) {
            status = QpSolution::Status::Infeasible;
            break;
          }
        }
      }
    }
    if (iter % s.adapt_interval == 0 && have_res && m > 0) {
      const double pr = res.prim_rel();
      const double dr = res.dual_rel();
      if (pr > 0.0 && dr > 0.0) {
        const double ratio = std::sqrt(pr / dr);
        const double rho_new = std::clamp(rho_scalar * ratio, kRhoMin, kRhoMax);
        if (rho_new > 5.0 * rho_scalar || rho_new < rho_scalar / 5.0) {
          rho_scalar = rho_new;
          c.rho_scalar = rho_new;
          for (Eigen::Index i = 0; i < m; ++i) {
            c.rho(i) = c.eq[static_cast<size_t>(i)]
                           ? std::min(rho_scalar * kRhoEqBoost, kRhoMax)
                           : rho_scalar;
          }
          c.factor();
        }
      }
    }
  }
  if (iter > s.max_iters) iter = s.max_iters;

  unscale();
  if (!have_res) res = scaled_residuals();
  sol.z = x_u;
  sol.dual = y_u;
  sol.status = status;
  sol.iters = iter;
  sol.primal_res = res.prim_rel();
  sol.dual_res = res.dual_rel();

  if (s.polish && status != QpSolution::Status::Infeasible) {
    QpSolution candidate;
    if (try_polish(x_u, y_u, res.prim_abs, false, false, candidate) ||
        try_polish(x_u, y_u, res.prim_abs, true, false, candidate) ||
        try_polish(x_u, y_u, res.prim_abs, true, true, candidate)) {
      candidate.iters = sol.iters;
      sol = std::move(candidate);
    }
  }

  if (sol.status != QpSolution::Status::Infeasible) {
    c.prev_x = sol.z;
    c.prev_y = sol.dual;
    c.have_prev = true;
  }
  return sol;
}

QpSolution solve_qp(const QpProblem& p, const QpSettings& s) {
  QpSolver solver;
  return solver.solve(p, s);
}

}  // namespace dpclab
