#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fpcert/kl.hpp"

namespace fpcert::bounds {

enum class MetricId { fp_residual, mse, nmse };
enum class Method { sample_convergence, pac_bayes, worst_case, combined };

std::string to_string(MetricId m);
std::string to_string(Method m);
std::optional<MetricId> metric_from_string(const std::string& s);

// One certified statement: "with the stated confidence, the probability that
// the metric exceeds epsilon after k steps is at most risk_bound".
struct Certificate {
  MetricId metric_id = MetricId::fp_residual;
  int k = 0;
  double epsilon = 0.0;
  double empirical_risk = 0.0;
  double r_bar = 0.0;  // Monte Carlo stage bound; equals empirical_risk for
                       // classical certificates
  double risk_bound = 1.0;
  double confidence = 0.0;
  Method method = Method::sample_convergence;
  long n_samples = 0;
  long h_samples = 1;
};

// Explicit accounting of every failure-probability split. Every certificate
// printed by the pipeline can recover its full delta decomposition from here.
struct ConfidenceLedger {
  struct Entry {
    std::string label;
    double failure_budget = 0.0;
  };
  std::vector<Entry> entries;

  void add(const std::string& label, double budget);
  double total_budget() const;
  double confidence() const;  // 1 - total_budget
};

struct LedgerConfidences {
  double risk_confidence;
  double quantile_confidence;
};

// Union-bound arithmetic for the standard pipeline budgets:
//   risk confidence     = 1 - n_btargets * (delta + omega)
//   quantile confidence = 1 - n_tolerances * n_btargets * (delta + omega).
// Classical certificates use omega = 0, n_btargets = 1.
LedgerConfidences confidence_ledger(double delta, double omega, int n_btargets,
                                    int n_tolerances);

// Discrete prior-variance grid lambda = lambda_max * exp(-a/b), a = 1, 2, ...
struct PriorGridSpec {
  double lambda_max = 100.0;
  double b = 100.0;
};

// Risk bound from the empirical risk of n i.i.d. 0-1 errors:
// kl_inverse(r_hat, log(2/delta)/n). Holds with probability 1 - delta.
double sample_convergence_bound(double r_hat, long n, double delta);

// PAC-Bayes risk bound kl_inverse(r_hat, (kl_div + log(2 sqrt(n)/delta))/n).
// Requires n >= 8.
double maurer_bound(double r_hat, long n, double kl_div, double delta);

// The regularizer B(w,s,lambda): grouped-Gaussian KL plus the union-bound
// charge for the data-dependent prior grid. Every lambda_j must sit on the
// grid with a_j >= 1.
double regularizer_B(const kl::GroupedGaussianSpec& spec, const PriorGridSpec& grid,
                     long n, double delta);

// Continuous relaxation of regularizer_B used during training: the grid
// exponents a_j = b log(lambda_max / lambda_j) may be any positive reals.
double regularizer_B_continuous(const kl::GroupedGaussianSpec& spec,
                                const PriorGridSpec& grid, long n, double delta);

// Snap each lambda_j to the nearest grid point; idempotent. Values above
// lambda_max clamp to the first grid point (a_j = 1).
Eigen::VectorXd round_prior(const Eigen::VectorXd& lambda, const PriorGridSpec& grid);

// Final calibrated bound kl_inverse(r_bar, B).
double generalization_bound(double r_bar, double B);

// Smallest tolerance whose risk bound is at most 1 - q, over an ascending
// tolerance -> bound map; nullopt when none qualifies.
std::optional<double> quantile_from_grid(const std::map<double, double>& bounds_by_tolerance,
                                         double quantile_q);

enum class RateKind { linear, averaged };

// Worst-case fixed-point-residual envelope relative to |z* - z0|:
// linear: 2 beta^k; averaged: the two-branch Krasnoselskii-Mann rate.
double worst_case_rate(RateKind kind, double param, int k);

// Risk is exactly zero once the worst-case envelope scaled by an a.s. bound
// on the initial distance falls below the tolerance; otherwise keep the
// probabilistic bound. Same confidence as prob_bound.
double combine_with_worst_case(double prob_bound, double worst_case_ratio,
                               double dist_upper, double epsilon);

}  // namespace fpcert::bounds
