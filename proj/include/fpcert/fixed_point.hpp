#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fpcert/bounds.hpp"

namespace fpcert::fp {

using Eigen::VectorXd;

// Declared worst-case class of an operator, consumed by the certificate
// machinery when combining probabilistic and worst-case statements.
struct OperatorClass {
  bounds::RateKind kind = bounds::RateKind::averaged;
  double param = 0.5;  // beta for linear, alpha for averaged
};

// A fixed-point mapping T(z, x) on R^n with parameter x. Implementations are
// immutable after construction and safe to share across threads.
class FixedPointOperator {
 public:
  virtual ~FixedPointOperator() = default;

  virtual int dim() const = 0;
  virtual VectorXd apply(const VectorXd& z, const VectorXd& x) const = 0;

  // Candidate-solution extraction from the fixed-point state (identity for
  // most operators; Douglas-Rachford returns the projected point).
  virtual VectorXd solution(const VectorXd& z, const VectorXd& x) const { return z; }

  virtual std::optional<OperatorClass> declared_class() const { return std::nullopt; }
};

// Per-instance, per-weight-sample, per-iteration metric values. Classical
// runs have h = 1. Iteration axis includes k = 0 (the initialization).
struct TraceTensor {
  bounds::MetricId metric_id = bounds::MetricId::fp_residual;
  int n = 0;      // instances
  int h = 1;      // weight samples
  int k_max = 0;  // values recorded for k = 0..k_max
  std::vector<double> values;  // layout [i][j][k]

  double& at(int i, int j, int k) {
    return values[(static_cast<std::size_t>(i) * h + j) * (k_max + 1) + k];
  }
  double at(int i, int j, int k) const {
    return values[(static_cast<std::size_t>(i) * h + j) * (k_max + 1) + k];
  }
  void resize(int n_, int h_, int k_max_);

  void write_csv(const std::string& path) const;
  static TraceTensor read_csv(const std::string& path);
  void write_binary(const std::string& path) const;
  static TraceTensor read_binary(const std::string& path);
};

// phi(z, x): fp_residual = |T(z,x) - z|, mse = |z - z*|^2,
// nmse = 10 log10(|z - z*|^2 / |z*|^2) capped below at -320 dB.
double evaluate_metric(bounds::MetricId metric_id, const VectorXd& z, const VectorXd& x,
                       const FixedPointOperator& op,
                       const std::optional<VectorXd>& z_true);

struct Instance {
  VectorXd x;
  std::optional<VectorXd> z_true;
};

// Initialization rule: zero start or a caller-supplied warm-start provider.
using WarmStart = std::function<VectorXd(const Instance&)>;

struct RunOptions {
  int k_max = 100;
  bounds::MetricId metric_id = bounds::MetricId::fp_residual;
  WarmStart warm_start;               // empty -> zero start
  bool count_nonfinite_as_failure = false;  // otherwise abort certification
  int threads = 0;                    // 0 -> library default
};

// Iterate z^{k+1} = T(z^k, x) for every instance, recording the metric at
// each k. Parallel over instances (OpenMP); results are independent of
// scheduling. Throws std::runtime_error naming the first failing instance if
// a non-finite iterate appears and count_nonfinite_as_failure is off.
TraceTensor run_trace(const FixedPointOperator& op, const std::vector<Instance>& instances,
                      const RunOptions& opt);

// Serial reference implementation of run_trace, kept for testing and the
// benchmark target. Must produce identical results.
TraceTensor run_trace_serial(const FixedPointOperator& op,
                             const std::vector<Instance>& instances,
                             const RunOptions& opt);

// Fraction of (instance, weight-sample) cells with values[i][j][k] >= eps.
double empirical_risk(const TraceTensor& trace, int k, double epsilon);

struct ClassicalCertification {
  std::vector<bounds::Certificate> certificates;
  // (k, q) -> certified tolerance (nullopt when no tolerance qualifies).
  std::map<std::pair<int, double>, std::optional<double>> quantile_table;
  bounds::ConfidenceLedger ledger;
  double risk_confidence = 0.0;
  double quantile_confidence = 0.0;
};

// Fig-1 pipeline step 3: a sample-convergence certificate per (k, epsilon)
// and a quantile certificate per (k, q), with explicit union-bound
// accounting over the tolerance grid.
ClassicalCertification certify_classical(const TraceTensor& trace,
                                         const std::vector<double>& tolerance_grid,
                                         double delta, const std::vector<double>& quantiles);

// Default tolerance grids: 81 log-spaced points in [1e-6, 1e2], or 81 linear
// points in [-80, 0] for NMSE.
std::vector<double> default_tolerance_grid(bounds::MetricId metric_id);

}  // namespace fpcert::fp
