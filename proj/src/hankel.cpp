#include "dpclab/hankel.hpp"

#include <sstream>

#include "dpclab/textio.hpp"

namespace dpclab {

Mat build_hankel(const Mat& seq, int depth) {
  const Eigen::Index m = seq.rows();
  const Eigen::Index t = seq.cols();
  if (depth < 1) throw std::invalid_argument("build_hankel: depth must be >= 1");
  if (t < depth) {
    std::ostringstream msg;
    msg << "build_hankel: sequence length " << t << " shorter than depth " << depth;
    throw std::invalid_argument(msg.str());
  }
  const Eigen::Index cols = t - depth + 1;
  Mat h(depth * m, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (int i = 0; i < depth; ++i) {
      h.block(i * m, j, m, 1) = seq.col(j + i);
    }
  }
  return h;
}

Mat build_hankel(const std::vector<double>& seq, int depth) {
  Mat m(1, static_cast<Eigen::Index>(seq.size()));
  for (size_t i = 0; i < seq.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = seq[i];
  return build_hankel(m, depth);
}

PeResult is_persistently_exciting(const Mat& seq, int order, double tol) {
  PeResult res;
  const Eigen::Index m = seq.rows();
  const Eigen::Index t = seq.cols();
  if (order < 1) throw std::invalid_argument("is_persistently_exciting: order must be >= 1");
  if (t < order) throw std::invalid_argument("is_persistently_exciting: sequence shorter than order");
  res.required = static_cast<Eigen::Index>(order) * m;
  if (t - order + 1 < res.required) {
    res.ok = false;
    res.diagnostic = "too few columns";
    return res;
  }
  res.rank = numerical_rank(build_hankel(seq, order), tol);
  res.ok = res.rank == res.required;
  if (!res.ok) res.diagnostic = "rank deficient";
  return res;
}

HankelSplit split_past_future(const Mat& u_d, const Mat& y_dd, int t_ini, int n_fut) {
  if (t_ini < 1 || n_fut < 1) {
    throw std::invalid_argument("split_past_future: t_ini and n_fut must be >= 1");
  }
  if (u_d.cols() != y_dd.cols()) {
    throw std::invalid_argument("split_past_future: input/output lengths differ");
  }
  const int depth = t_ini + n_fut;
  if (u_d.cols() < depth) {
    std::ostringstream msg;
    msg << "split_past_future: need at least " << depth << " samples, got " << u_d.cols();
    throw std::invalid_argument(msg.str());
  }
  const Mat hu = build_hankel(u_d, depth);
  const Mat hy = build_hankel(y_dd, depth);
  const Eigen::Index mu = u_d.rows();
  const Eigen::Index my = y_dd.rows();
  HankelSplit s;
  s.up = hu.topRows(t_ini * mu);
  s.uf = hu.bottomRows(n_fut * mu);
  s.yp = hy.topRows(t_ini * my);
  s.yf = hy.bottomRows(n_fut * my);
  return s;
}

TrajectoryDataset make_dataset(Mat u_d, Mat y_d, Mat y_dm, int t_ini, int n_fut,
                               double ts, DiscreteLTI model, std::uint64_t seed,
                               std::string collection_variant, PeResult pe) {
  if (u_d.cols() != y_d.cols() || y_d.cols() != y_dm.cols() || y_d.rows() != y_dm.rows()) {
    throw std::invalid_argument("make_dataset: sequence shapes differ");
  }
  if (u_d.cols() < t_ini + n_fut) {
    throw std::invalid_argument("make_dataset: too few samples for the requested windows");
  }
  TrajectoryDataset ds;
  ds.u_d = std::move(u_d);
  ds.y_d = std::move(y_d);
  ds.y_dm = std::move(y_dm);
  ds.y_dd = ds.y_d - ds.y_dm;
  ds.t_ini = t_ini;
  ds.n_fut = n_fut;
  ds.ts = ts;
  ds.model = std::move(model);
  ds.seed = seed;
  ds.collection_variant = std::move(collection_variant);
  ds.pe = pe;
  HankelSplit s = split_past_future(ds.u_d, ds.y_dd, t_ini, n_fut);
  ds.up = std::move(s.up);
  ds.yp = std::move(s.yp);
  ds.uf = std::move(s.uf);
  ds.yf = std::move(s.yf);
  return ds;
}

std::string meta_path_for(const std::string& csv_path) {
  const auto dot = csv_path.find_last_of('.');
  const auto slash = csv_path.find_last_of("/\\");
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
    return csv_path + ".meta";
  }
  return csv_path.substr(0, dot) + ".meta";
}

void save_dataset(const TrajectoryDataset& ds, const std::string& csv_path) {
  if (ds.n_u() != 1 || ds.n_y() != 1) {
    throw std::invalid_argument("save_dataset: CSV format covers SISO datasets");
  }
  std::string csv = "k,u,y,y_model,y_residual\n";
  for (Eigen::Index k = 0; k < ds.t_d(); ++k) {
    csv += std::to_string(k);
    csv += ',';
    csv += fmt_double(ds.u_d(0, k));
    csv += ',';
    csv += fmt_double(ds.y_d(0, k));
    csv += ',';
    csv += fmt_double(ds.y_dm(0, k));
    csv += ',';
    csv += fmt_double(ds.y_dd(0, k));
    csv += '\n';
  }
  write_text_file(csv_path, csv);

  std::string meta;
  meta += "t_ini = " + std::to_string(ds.t_ini) + "\n";
  meta += "n_fut = " + std::to_string(ds.n_fut) + "\n";
  meta += "ts = " + fmt_double(ds.ts) + "\n";
  meta += "seed = " + std::to_string(ds.seed) + "\n";
  meta += "variant = " + ds.collection_variant + "\n";
  meta += "model_a = " + mat_to_string(ds.model.A) + "\n";
  meta += "model_b = " + mat_to_string(ds.model.B) + "\n";
  meta += "model_c = " + mat_to_string(ds.model.C) + "\n";
  meta += "model_d = " + mat_to_string(ds.model.D) + "\n";
  meta += "pe_ok = " + std::string(ds.pe.ok ? "true" : "false") + "\n";
  meta += "pe_rank = " + std::to_string(ds.pe.rank) + "\n";
  meta += "pe_required = " + std::to_string(ds.pe.required) + "\n";
  write_text_file(meta_path_for(csv_path), meta);
}

namespace {

std::string meta_value(const std::string& meta, const std::string& key) {
  std::istringstream in(meta);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq);
    while (!k.empty() && (k.back() == ' ' || k.back() == '\t')) k.pop_back();
    if (k == key) {
      std::string v = line.substr(eq + 1);
      size_t b = v.find_first_not_of(" \t");
      return b == std::string::npos ? "" : v.substr(b);
    }
  }
  throw std::runtime_error("dataset meta: missing key '" + key + "'");
}

}  // namespace

TrajectoryDataset load_dataset(const std::string& csv_path) {
  const std::string csv = read_text_file(csv_path);
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_dataset: empty file");
  if (split_csv_line(line) != std::vector<std::string>{"k", "u", "y", "y_model", "y_residual"}) {
    throw std::runtime_error("load_dataset: unexpected CSV header in " + csv_path);
  }
  std::vector<double> u, y, ym;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw std::runtime_error("load_dataset: malformed row: " + line);
    u.push_back(std::stod(f[1]));
    y.push_back(std::stod(f[2]));
    ym.push_back(std::stod(f[3]));
  }
  const auto n = static_cast<Eigen::Index>(u.size());
  Mat mu(1, n), my(1, n), mym(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    mu(0, i) = u[i];
    my(0, i) = y[i];
    mym(0, i) = ym[i];
  }

  const std::string meta = read_text_file(meta_path_for(csv_path));
  DiscreteLTI model;
  model.A = mat_from_string(meta_value(meta, "model_a"));
  model.B = mat_from_string(meta_value(meta, "model_b"));
  model.C = mat_from_string(meta_value(meta, "model_c"));
  model.D = mat_from_string(meta_value(meta, "model_d"));
  model.ts = std::stod(meta_value(meta, "ts"));
  PeResult pe;
  pe.ok = meta_value(meta, "pe_ok") == "true";
  pe.rank = std::stol(meta_value(meta, "pe_rank"));
  pe.required = std::stol(meta_value(meta, "pe_required"));
  return make_dataset(std::move(mu), std::move(my), std::move(mym),
                      std::stoi(meta_value(meta, "t_ini")),
                      std::stoi(meta_value(meta, "n_fut")),
                      std::stod(meta_value(meta, "ts")), std::move(model),
                      std::stoull(meta_value(meta, "seed")),
                      meta_value(meta, "variant"), pe);
}

}  // namespace dpclab
