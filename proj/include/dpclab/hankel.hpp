#pragma once

#include <cstdint>
#include <string>

#include "dpclab/systems.hpp"

namespace dpclab {

/// Hankel matrix of depth L: column j stacks samples j..j+L-1 of the
/// sequence. Samples are the columns of seq (one column per time step), so
/// the result is (L*m) x (T-L+1).
Mat build_hankel(const Mat& seq, int depth);
Mat build_hankel(const std::vector<double>& seq, int depth);

struct PeResult {
  bool ok = false;
  Eigen::Index rank = 0;
  Eigen::Index required = 0;
  std::string diagnostic;
};

/// Full-row-rank test of the depth-`order` Hankel matrix of seq.
PeResult is_persistently_exciting(const Mat& seq, int order, double tol = 1e-9);

struct HankelSplit {
  Mat up, yp, uf, yf;
};

/// Splits the depth-(t_ini+n_fut) Hankel matrices of the input and residual
/// output sequences into past (first t_ini block rows) and future (last n_fut
/// block rows) parts.
HankelSplit split_past_future(const Mat& u_d, const Mat& y_dd, int t_ini, int n_fut);

/// Collected input/output/residual sequences plus the four Hankel blocks.
/// Sequences are channels x T_d, one column per sample. Immutable after
/// construction.
struct TrajectoryDataset {
  Mat u_d;    // applied input
  Mat y_d;    // plant output
  Mat y_dm;   // parametric-model output
  Mat y_dd;   // residual y_d - y_dm
  int t_ini = 0;
  int n_fut = 0;
  double ts = 0.0;
  DiscreteLTI model;  // parametric model used during collection
  std::uint64_t seed = 0;
  std::string collection_variant;  // "sdmpc" | "rsdmpc" | "raw"
  PeResult pe;
  Mat up, yp, uf, yf;

  Eigen::Index t_d() const { return u_d.cols(); }
  Eigen::Index n_u() const { return u_d.rows(); }
  Eigen::Index n_y() const { return y_d.rows(); }
  Eigen::Index n_g() const { return t_d() - (t_ini + n_fut) + 1; }
};

/// Assembles the dataset, deriving the residual sequence and Hankel blocks,
/// and checks the size invariants.
TrajectoryDataset make_dataset(Mat u_d, Mat y_d, Mat y_dm, int t_ini, int n_fut,
                               double ts, DiscreteLTI model, std::uint64_t seed,
                               std::string collection_variant, PeResult pe);

/// CSV persistence: header `k,u,y,y_model,y_residual`, one row per sample,
/// plus a key-value sidecar with the same basename and a `.meta` suffix.
void save_dataset(const TrajectoryDataset& ds, const std::string& csv_path);
TrajectoryDataset load_dataset(const std::string& csv_path);

/// dataset.csv -> dataset.meta
std::string meta_path_for(const std::string& csv_path);

}  // namespace dpclab
