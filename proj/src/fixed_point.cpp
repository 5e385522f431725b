#include "fpcert/fixed_point.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fpcert::fp {

void TraceTensor::resize(int n_, int h_, int k_max_) {
  n = n_;
  h = h_;
  k_max = k_max_;
  values.assign(static_cast<std::size_t>(n) * h * (k_max + 1), 0.0);
}

void TraceTensor::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("TraceTensor: cannot open " + path);
  out << "instance,weight_sample,iteration,value\n";
  out.precision(17);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < h; ++j) {
      for (int k = 0; k <= k_max; ++k) {
        out << i << ',' << j << ',' << k << ',' << at(i, j, k) << '\n';
      }
    }
  }
}

TraceTensor TraceTensor::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("TraceTensor: cannot open " + path);
  std::string line;
  std::getline(in, line);  // header
  int max_i = -1, max_j = -1, max_k = -1;
  struct Row { int i, j, k; double v; };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Row r{};
    char c;
    std::istringstream ss(line);
    if (!(ss >> r.i >> c >> r.j >> c >> r.k >> c >> r.v)) {
      throw std::runtime_error("TraceTensor: bad row in " + path);
    }
    rows.push_back(r);
    max_i = std::max(max_i, r.i);
    max_j = std::max(max_j, r.j);
    max_k = std::max(max_k, r.k);
  }
  TraceTensor t;
  t.resize(max_i + 1, max_j + 1, max_k);
  for (const auto& r : rows) t.at(r.i, r.j, r.k) = r.v;
  return t;
}

namespace {
constexpr char kTraceMagic[8] = {'F', 'P', 'T', 'R', 'A', 'C', 'E', '1'};
}

void TraceTensor::write_binary(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("TraceTensor: cannot open " + path);
  out.write(kTraceMagic, 8);
  const std::int64_t dims[4] = {static_cast<std::int64_t>(metric_id), n, h, k_max};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

TraceTensor TraceTensor::read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("TraceTensor: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kTraceMagic)) {
    throw std::runtime_error("TraceTensor: bad magic in " + path);
  }
  std::int64_t dims[4];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  TraceTensor t;
  t.metric_id = static_cast<bounds::MetricId>(dims[0]);
  t.resize(static_cast<int>(dims[1]), static_cast<int>(dims[2]), static_cast<int>(dims[3]));
  in.read(reinterpret_cast<char*>(t.values.data()),
          static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  if (!in) throw std::runtime_error("TraceTensor: truncated file " + path);
  return t;
}

double evaluate_metric(bounds::MetricId metric_id, const VectorXd& z, const VectorXd& x,
                       const FixedPointOperator& op,
                       const std::optional<VectorXd>& z_true) {
  switch (metric_id) {
    case bounds::MetricId::fp_residual:
      return (op.apply(z, x) - z).norm();
    case bounds::MetricId::mse: {
      if (!z_true) throw std::invalid_argument("mse metric requires a ground truth");
      return (z - *z_true).squaredNorm();
    }
    case bounds::MetricId::nmse: {
      if (!z_true) throw std::invalid_argument("nmse metric requires a ground truth");
      const double denom = z_true->squaredNorm();
      if (denom == 0.0) throw std::invalid_argument("nmse metric: zero ground truth");
      const double num = (z - *z_true).squaredNorm();
      if (num == 0.0) return -320.0;
      return std::max(-320.0, 10.0 * std::log10(num / denom));
    }
  }
  throw std::invalid_argument("unknown metric");
}

namespace {

// Runs one instance's iteration loop, filling trace[i][0][*]. Returns false
// on a non-finite iterate when those abort the run.
bool trace_one(const FixedPointOperator& op, const Instance& inst, const RunOptions& opt,
               TraceTensor& out, int i) {
  VectorXd z = opt.warm_start ? opt.warm_start(inst)
                              : VectorXd::Zero(op.dim());
  for (int k = 0; k <= opt.k_max; ++k) {
    if (!z.allFinite()) {
      if (!opt.count_nonfinite_as_failure) return false;
      for (int kk = k; kk <= opt.k_max; ++kk) {
        out.at(i, 0, kk) = std::numeric_limits<double>::infinity();
      }
      return true;
    }
    out.at(i, 0, k) = evaluate_metric(opt.metric_id, z, inst.x, op, inst.z_true);
    if (k < opt.k_max) z = op.apply(z, inst.x);
  }
  return true;
}

}  // namespace

TraceTensor run_trace_serial(const FixedPointOperator& op,
                             const std::vector<Instance>& instances,
                             const RunOptions& opt) {
  if (opt.k_max < 1) throw std::invalid_argument("run_trace: k_max must be >= 1");
  TraceTensor t;
  t.metric_id = opt.metric_id;
  t.resize(static_cast<int>(instances.size()), 1, opt.k_max);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!trace_one(op, instances[i], opt, t, static_cast<int>(i))) {
      throw std::runtime_error("run_trace: non-finite iterate at instance " +
                               std::to_string(i));
    }
  }
  return t;
}

TraceTensor run_trace(const FixedPointOperator& op, const std::vector<Instance>& instances,
                      const RunOptions& opt) {
  if (opt.k_max < 1) throw std::invalid_argument("run_trace: k_max must be >= 1");
  TraceTensor t;
  t.metric_id = opt.metric_id;
  t.resize(static_cast<int>(instances.size()), 1, opt.k_max);
  const int n = static_cast<int>(instances.size());
  int first_bad = -1;
#ifdef _OPENMP
  const int nthreads = opt.threads > 0 ? opt.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
#endif
  for (int i = 0; i < n; ++i) {
    if (!trace_one(op, instances[i], opt, t, i)) {
#ifdef _OPENMP
#pragma omp critical
#endif
      {
        if (first_bad < 0 || i < first_bad) first_bad = i;
      }
    }
  }
  if (first_bad >= 0) {
    throw std::runtime_error("run_trace: non-finite iterate at instance " +
                             std::to_string(first_bad));
  }
  return t;
}

double empirical_risk(const TraceTensor& trace, int k, double epsilon) {
  if (k < 0 || k > trace.k_max) throw std::invalid_argument("empirical_risk: k out of range");
  long fails = 0;
  for (int i = 0; i < trace.n; ++i) {
    for (int j = 0; j < trace.h; ++j) {
      if (trace.at(i, j, k) >= epsilon) ++fails;
    }
  }
  return static_cast<double>(fails) / (static_cast<double>(trace.n) * trace.h);
}

ClassicalCertification certify_classical(const TraceTensor& trace,
                                         const std::vector<double>& tolerance_grid,
                                         double delta, const std::vector<double>& quantiles) {
  if (trace.h != 1) {
    throw std::invalid_argument("certify_classical: trace must be classical (h = 1)");
  }
  if (tolerance_grid.empty()) {
    throw std::invalid_argument("certify_classical: empty tolerance grid");
  }
  if (!std::is_sorted(tolerance_grid.begin(), tolerance_grid.end())) {
    throw std::invalid_argument("certify_classical: tolerance grid must be ascending");
  }
  const int n_tol = static_cast<int>(tolerance_grid.size());
  const auto conf = bounds::confidence_ledger(delta, 0.0, 1, n_tol);

  ClassicalCertification out;
  out.risk_confidence = conf.risk_confidence;
  out.quantile_confidence = conf.quantile_confidence;
  out.ledger.add("sample_convergence delta", delta);
  out.ledger.add("tolerance-grid union (x" + std::to_string(n_tol - 1) + " extra)",
                 delta * (n_tol - 1));

  for (int k = 0; k <= trace.k_max; ++k) {
    std::map<double, double> bounds_by_tol;
    for (double eps : tolerance_grid) {
      const double r_hat = empirical_risk(trace, k, eps);
      const double bound = bounds::sample_convergence_bound(r_hat, trace.n, delta);
      bounds::Certificate cert;
      cert.metric_id = trace.metric_id;
      cert.k = k;
      cert.epsilon = eps;
      cert.empirical_risk = r_hat;
      cert.r_bar = r_hat;
      cert.risk_bound = bound;
      cert.confidence = conf.risk_confidence;
      cert.method = bounds::Method::sample_convergence;
      cert.n_samples = trace.n;
      cert.h_samples = 1;
      out.certificates.push_back(cert);
      bounds_by_tol[eps] = bound;
    }
    for (double q : quantiles) {
      out.quantile_table[{k, q}] = bounds::quantile_from_grid(bounds_by_tol, q);
    }
  }
  return out;
}

std::vector<double> default_tolerance_grid(bounds::MetricId metric_id) {
  std::vector<double> grid(81);
  if (metric_id == bounds::MetricId::nmse) {
    for (int i = 0; i < 81; ++i) grid[i] = -80.0 + i * 1.0;
  } else {
    for (int i = 0; i < 81; ++i) grid[i] = std::pow(10.0, -6.0 + 8.0 * i / 80.0);
  }
  return grid;
}

}  // namespace fpcert::fp
