#include "fpcert/bounds.hpp"

#include <cmath>
#include <stdexcept>

namespace fpcert::bounds {

std::string to_string(MetricId m) {
  switch (m) {
    case MetricId::fp_residual: return "fp_residual";
    case MetricId::mse: return "mse";
    case MetricId::nmse: return "nmse";
  }
  return "?";
}

std::string to_string(Method m) {
  switch (m) {
    case Method::sample_convergence: return "sample_convergence";
    case Method::pac_bayes: return "pac_bayes";
    case Method::worst_case: return "worst_case";
    case Method::combined: return "combined";
  }
  return "?";
}

std::optional<MetricId> metric_from_string(const std::string& s) {
  if (s == "fp_residual") return MetricId::fp_residual;
  if (s == "mse") return MetricId::mse;
  if (s == "nmse") return MetricId::nmse;
  return std::nullopt;
}

void ConfidenceLedger::add(const std::string& label, double budget) {
  if (budget < 0.0) throw std::invalid_argument("ledger: negative budget");
  entries.push_back({label, budget});
  if (total_budget() >= 1.0) {
    throw std::invalid_argument("ledger: total failure budget reached 1");
  }
}

double ConfidenceLedger::total_budget() const {
  double t = 0.0;
  for (const auto& e : entries) t += e.failure_budget;
  return t;
}

double ConfidenceLedger::confidence() const { return 1.0 - total_budget(); }

LedgerConfidences confidence_ledger(double delta, double omega, int n_btargets,
                                    int n_tolerances) {
  if (n_btargets < 1 || n_tolerances < 1) {
    throw std::invalid_argument("confidence_ledger: multiplicities must be >= 1");
  }
  const double risk_budget = n_btargets * (delta + omega);
  const double quant_budget = static_cast<double>(n_tolerances) * risk_budget;
  if (risk_budget >= 1.0 || quant_budget >= 1.0) {
    throw std::invalid_argument("confidence_ledger: failure budget >= 1");
  }
  return {1.0 - risk_budget, 1.0 - quant_budget};
}

double sample_convergence_bound(double r_hat, long n, double delta) {
  if (n < 1) throw std::invalid_argument("sample_convergence_bound: n < 1");
  if (delta <= 0.0 || delta >= 1.0) {
    throw std::invalid_argument("sample_convergence_bound: delta outside (0,1)");
  }
  return kl::kl_inverse(r_hat, std::log(2.0 / delta) / static_cast<double>(n));
}

double maurer_bound(double r_hat, long n, double kl_div, double delta) {
  if (n < 8) throw std::invalid_argument("maurer_bound: requires n >= 8");
  if (kl_div < 0.0) throw std::invalid_argument("maurer_bound: negative KL");
  if (delta <= 0.0 || delta >= 1.0) {
    throw std::invalid_argument("maurer_bound: delta outside (0,1)");
  }
  const double budget =
      (kl_div + std::log(2.0 * std::sqrt(static_cast<double>(n)) / delta)) /
      static_cast<double>(n);
  return kl::kl_inverse(r_hat, budget);
}

namespace {

// Grid exponent a_j = b log(lambda_max / lambda_j); must be a positive
// integer within rounding tolerance.
double grid_exponent(double lambda_j, const PriorGridSpec& grid) {
  if (lambda_j <= 0.0) throw std::domain_error("prior grid: lambda <= 0");
  return grid.b * std::log(grid.lambda_max / lambda_j);
}

}  // namespace

namespace {

double regularizer_B_impl(const kl::GroupedGaussianSpec& spec, const PriorGridSpec& grid,
                          long n, double delta, bool require_grid) {
  if (n < 8) throw std::invalid_argument("regularizer_B: requires n >= 8");
  if (delta <= 0.0 || delta >= 1.0) {
    throw std::invalid_argument("regularizer_B: delta outside (0,1)");
  }
  const double kl_term = kl::gaussian_kl_grouped(spec);
  double union_term = 0.0;
  for (Eigen::Index j = 0; j < spec.lambda.size(); ++j) {
    const double a = grid_exponent(spec.lambda[j], grid);
    if (require_grid && (a < 0.5 || std::abs(a - std::round(a)) > 1e-6)) {
      throw std::domain_error("regularizer_B: lambda off the prior grid or a_j < 1");
    }
    if (a <= 0.0) throw std::domain_error("regularizer_B: lambda >= lambda_max");
    union_term += 2.0 * std::log(a);
  }
  const double J = static_cast<double>(spec.lambda.size());
  const double nn = static_cast<double>(n);
  return (kl_term + union_term + J * std::log(M_PI * M_PI / 6.0) +
          std::log(2.0 * std::sqrt(nn) / delta)) /
         nn;
}

}  // namespace

double regularizer_B(const kl::GroupedGaussianSpec& spec, const PriorGridSpec& grid,
                     long n, double delta) {
  return regularizer_B_impl(spec, grid, n, delta, true);
}

double regularizer_B_continuous(const kl::GroupedGaussianSpec& spec,
                                const PriorGridSpec& grid, long n, double delta) {
  return regularizer_B_impl(spec, grid, n, delta, false);
}

Eigen::VectorXd round_prior(const Eigen::VectorXd& lambda, const PriorGridSpec& grid) {
  Eigen::VectorXd out(lambda.size());
  for (Eigen::Index j = 0; j < lambda.size(); ++j) {
    double a = std::round(grid_exponent(lambda[j], grid));
    if (a < 1.0) a = 1.0;  // lambda above (or at) lambda_max clamps to a = 1
    out[j] = grid.lambda_max * std::exp(-a / grid.b);
  }
  return out;
}

double generalization_bound(double r_bar, double B) {
  if (B < 0.0) throw std::invalid_argument("generalization_bound: negative B");
  return kl::kl_inverse(r_bar, B);
}

std::optional<double> quantile_from_grid(const std::map<double, double>& bounds_by_tolerance,
                                         double quantile_q) {
  if (bounds_by_tolerance.empty()) {
    throw std::invalid_argument("quantile_from_grid: empty grid");
  }
  if (quantile_q <= 0.0 || quantile_q >= 1.0) {
    throw std::invalid_argument("quantile_from_grid: q outside (0,1)");
  }
  const double cap = 1.0 - quantile_q;
  for (const auto& [eps, bound] : bounds_by_tolerance) {
    if (bound <= cap) return eps;
  }
  return std::nullopt;
}

double worst_case_rate(RateKind kind, double param, int k) {
  if (k < 0) throw std::invalid_argument("worst_case_rate: k < 0");
  if (kind == RateKind::linear) {
    if (param <= 0.0 || param >= 1.0) {
      throw std::invalid_argument("worst_case_rate: beta outside (0,1)");
    }
    return 2.0 * std::pow(param, k);
  }
  const double alpha = param;
  if (alpha < 0.5 || alpha >= 1.0) {
    throw std::invalid_argument("worst_case_rate: alpha outside [1/2,1)");
  }
  const double t = static_cast<double>(k) / static_cast<double>(k + 1);
  const double boundary = 0.5 * (1.0 + std::sqrt(t));
  if (alpha <= boundary) {
    // Convention 0^0 = 1 at k = 0 (so the k = 0 value matches the linear
    // class's 2 beta^0 = 2).
    const double tk = (k == 0) ? 1.0 : std::pow(t, k);
    return std::sqrt(tk / (static_cast<double>(k + 1) * alpha * (1.0 - alpha)));
  }
  return 2.0 * std::pow(2.0 * alpha - 1.0, k);
}

double combine_with_worst_case(double prob_bound, double worst_case_ratio,
                               double dist_upper, double epsilon) {
  if (worst_case_ratio * dist_upper < epsilon) return 0.0;
  return prob_bound;
}

}  // namespace fpcert::bounds
