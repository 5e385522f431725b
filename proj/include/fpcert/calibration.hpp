#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "fpcert/fixed_point.hpp"
#include "fpcert/training.hpp"

namespace fpcert::calibration {

struct CalibrationConfig {
  int h_samples = 2000;
  double delta = 1e-5;
  double omega = 1e-5;
  std::vector<double> tolerance_grid;
  int k_max = 10;
  bounds::MetricId metric_id = bounds::MetricId::nmse;
  std::uint64_t seed = 0;
  int n_btargets = 1;  // union multiplicity charged when cross-validating
  int threads = 0;
  bool count_nonfinite_as_failure = false;
};

// Monte Carlo empirical-risk surface over (iteration, tolerance). The full
// (instance, sample, iteration) tensor is never stored; rollouts stream
// exceedance counts into the grid, so memory is O(k_max * |grid|).
struct RiskGrid {
  bounds::MetricId metric_id = bounds::MetricId::nmse;
  long n = 0;
  long h = 0;
  int k_max = 0;
  std::vector<double> tolerance_grid;
  std::vector<double> risk;  // [k * n_tol + t]

  double at(int k, int t) const {
    return risk[static_cast<std::size_t>(k) * tolerance_grid.size() + t];
  }
};

// R_hat(k, eps) = (1/NH) sum_j sum_i 1{metric(theta_j, x_i, k) >= eps} with
// H weight samples theta_j from per-sample derived rng streams. Parallel over
// samples; exceedance counts are integers, so the result is
// schedule-independent. Non-finite iterates abort unless
// count_nonfinite_as_failure, in which case they exceed every tolerance.
RiskGrid mc_empirical_risk(const learned::Posterior& posterior,
                           const learned::Architecture& arch,
                           const std::vector<fp::Instance>& instances,
                           const CalibrationConfig& cal);

struct LearnedCertification {
  std::vector<bounds::Certificate> certificates;
  std::map<std::pair<int, double>, std::optional<double>> quantile_table;
  bounds::ConfidenceLedger ledger;
  double risk_confidence = 0.0;
  double quantile_confidence = 0.0;
  double b_star = 0.0;
};

// Per cell: r_bar = kl_inverse(r_hat, log(2/omega)/H) (Monte Carlo stage),
// r_star = kl_inverse(r_bar, b_star) (PAC-Bayes stage). b_star must be the
// regularizer value at the trained, rounded posterior.
LearnedCertification calibrate_bound(const RiskGrid& grid, double b_star,
                                     const CalibrationConfig& cal);

// Full bundle: mc_empirical_risk + calibrate_bound + quantile extraction.
// b_star is computed from the posterior against the architecture's prior at
// N = |train_instances|. The ledger charges delta, omega, the B-target union
// multiplicity, and the tolerance-grid union multiplicity.
LearnedCertification certify_learned(const learned::Posterior& posterior,
                                     const learned::Architecture& arch,
                                     const std::vector<fp::Instance>& train_instances,
                                     const CalibrationConfig& cal,
                                     const std::vector<double>& quantiles,
                                     const bounds::PriorGridSpec& grid);

struct CrossvalResult {
  training::TrainResult best;
  double best_btarget = 0.0;
  LearnedCertification best_certification;
  std::vector<std::pair<double, double>> scores;  // (b_target, selection score)
};

// Trains one posterior per B-target, certifies each with the grid-size union
// multiplicity already charged, and keeps the candidate with the smallest
// certified tolerance at (target_k, target_q) (uncertified cells score
// +inf; ties keep the earlier grid entry).
CrossvalResult crossval_btarget(const learned::Architecture& arch,
                                const training::Batch& train_batch,
                                const std::vector<fp::Instance>& train_instances,
                                const training::LossSpec& loss,
                                training::TrainConfig cfg_base,
                                const std::vector<double>& btarget_grid,
                                const CalibrationConfig& cal,
                                const std::vector<double>& quantiles, int target_k,
                                double target_q);

}  // namespace fpcert::calibration
