#include "fpcert/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fpcert/rng.hpp"

namespace fpcert::calibration {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_config(const CalibrationConfig& cal, std::size_t n_instances) {
  if (cal.h_samples < 1) throw std::invalid_argument("calibration: H < 1");
  if (n_instances < 1) throw std::invalid_argument("calibration: no instances");
  if (cal.k_max < 1) throw std::invalid_argument("calibration: k_max < 1");
  if (cal.tolerance_grid.empty() ||
      !std::is_sorted(cal.tolerance_grid.begin(), cal.tolerance_grid.end())) {
    throw std::invalid_argument("calibration: tolerance grid must be ascending");
  }
  if (cal.delta + cal.omega >= 1.0) {
    throw std::invalid_argument("calibration: delta + omega >= 1");
  }
}

kl::GroupedGaussianSpec posterior_vs_prior(const learned::Posterior& post,
                                           const learned::Architecture& arch) {
  kl::GroupedGaussianSpec spec;
  spec.w = post.w;
  spec.s = post.s;
  spec.w0 = arch.prior_mean();
  spec.groups = arch.groups();
  spec.lambda = post.lambda;
  return spec;
}

}  // namespace

RiskGrid mc_empirical_risk(const learned::Posterior& posterior,
                           const learned::Architecture& arch,
                           const std::vector<fp::Instance>& instances,
                           const CalibrationConfig& cal) {
  check_config(cal, instances.size());
  const int n = static_cast<int>(instances.size());
  const int n_tol = static_cast<int>(cal.tolerance_grid.size());
  const bool needs_truth = cal.metric_id != bounds::MetricId::fp_residual;
  const bool residual = cal.metric_id == bounds::MetricId::fp_residual;

  MatrixXd x_batch(instances[0].x.size(), n);
  MatrixXd z_true(arch.z_dim(), needs_truth ? n : 0);
  VectorXd truth_norm2(needs_truth ? n : 0);
  for (int i = 0; i < n; ++i) {
    x_batch.col(i) = instances[i].x;
    if (needs_truth) {
      if (!instances[i].z_true) {
        throw std::invalid_argument("mc_empirical_risk: metric requires ground truths");
      }
      z_true.col(i) = *instances[i].z_true;
      truth_norm2[i] = instances[i].z_true->squaredNorm();
      if (cal.metric_id == bounds::MetricId::nmse && truth_norm2[i] == 0.0) {
        throw std::invalid_argument("mc_empirical_risk: zero ground truth for nmse");
      }
    }
  }

  // histo[k][idx]: rollout values whose exceedance cutoff is idx (the value
  // is >= the first idx tolerances). Integer counts make the reduction
  // independent of thread scheduling.
  std::vector<std::vector<long>> histo(cal.k_max + 1,
                                       std::vector<long>(n_tol + 1, 0));
  int first_bad = -1;

#ifdef _OPENMP
  const int nthreads = cal.threads > 0 ? cal.threads : omp_get_max_threads();
#pragma omp parallel num_threads(nthreads)
#endif
  {
    std::vector<std::vector<long>> local(cal.k_max + 1,
                                         std::vector<long>(n_tol + 1, 0));
#ifdef _OPENMP
#pragma omp for schedule(dynamic)
#endif
    for (int j = 0; j < cal.h_samples; ++j) {
      Rng rng(cal.seed, stream::weight_sample, static_cast<std::uint64_t>(j));
      const VectorXd theta = learned::sample_weights(posterior.w, posterior.s, rng);
      const auto z = arch.iterates_batch(theta, x_batch, cal.k_max + (residual ? 1 : 0));
      for (int k = 0; k <= cal.k_max; ++k) {
        for (int i = 0; i < n; ++i) {
          double v;
          if (residual) {
            v = (z[k + 1].col(i) - z[k].col(i)).norm();
          } else {
            const double num = (z[k].col(i) - z_true.col(i)).squaredNorm();
            if (cal.metric_id == bounds::MetricId::mse) {
              v = num;
            } else if (num == 0.0) {
              v = -320.0;
            } else {
              v = std::max(-320.0, 10.0 * std::log10(num / truth_norm2[i]));
            }
          }
          if (!std::isfinite(v)) {
            if (!cal.count_nonfinite_as_failure) {
#ifdef _OPENMP
#pragma omp critical
#endif
              {
                if (first_bad < 0 || j < first_bad) first_bad = j;
              }
              v = std::numeric_limits<double>::infinity();
            }
            local[k][n_tol] += 1;  // exceeds every tolerance
            continue;
          }
          const auto it = std::upper_bound(cal.tolerance_grid.begin(),
                                           cal.tolerance_grid.end(), v);
          local[k][it - cal.tolerance_grid.begin()] += 1;
        }
      }
    }
#ifdef _OPENMP
#pragma omp critical
#endif
    {
      for (int k = 0; k <= cal.k_max; ++k) {
        for (int t = 0; t <= n_tol; ++t) histo[k][t] += local[k][t];
      }
    }
  }
  if (first_bad >= 0) {
    throw std::runtime_error("mc_empirical_risk: non-finite rollout at weight sample " +
                             std::to_string(first_bad));
  }

  RiskGrid grid;
  grid.metric_id = cal.metric_id;
  grid.n = n;
  grid.h = cal.h_samples;
  grid.k_max = cal.k_max;
  grid.tolerance_grid = cal.tolerance_grid;
  grid.risk.assign(static_cast<std::size_t>(cal.k_max + 1) * n_tol, 0.0);
  const double total = static_cast<double>(n) * cal.h_samples;
  for (int k = 0; k <= cal.k_max; ++k) {
    long exceed = 0;
    for (int t = n_tol - 1; t >= 0; --t) {
      exceed += histo[k][t + 1];  // values with cutoff > t are >= eps_t
      grid.risk[static_cast<std::size_t>(k) * n_tol + t] =
          static_cast<double>(exceed) / total;
    }
  }
  return grid;
}

LearnedCertification calibrate_bound(const RiskGrid& grid, double b_star,
                                     const CalibrationConfig& cal) {
  if (b_star < 0.0) throw std::invalid_argument("calibrate_bound: negative B*");
  const int n_tol = static_cast<int>(grid.tolerance_grid.size());
  const auto conf =
      bounds::confidence_ledger(cal.delta, cal.omega, cal.n_btargets, n_tol);

  LearnedCertification out;
  out.b_star = b_star;
  out.risk_confidence = conf.risk_confidence;
  out.quantile_confidence = conf.quantile_confidence;
  out.ledger.add("pac_bayes delta", cal.delta);
  out.ledger.add("mc calibration omega", cal.omega);
  if (cal.n_btargets > 1) {
    out.ledger.add("B-target grid union (x" + std::to_string(cal.n_btargets - 1) +
                       " extra)",
                   (cal.n_btargets - 1) * (cal.delta + cal.omega));
  }
  out.ledger.add("tolerance-grid union (x" + std::to_string(n_tol - 1) + " extra)",
                 (n_tol - 1) * cal.n_btargets * (cal.delta + cal.omega));

  const double mc_budget = std::log(2.0 / cal.omega) / static_cast<double>(grid.h);
  for (int k = 0; k <= grid.k_max; ++k) {
    for (int t = 0; t < n_tol; ++t) {
      const double r_hat = grid.at(k, t);
      const double r_bar = kl::kl_inverse(r_hat, mc_budget);
      const double r_star = bounds::generalization_bound(r_bar, b_star);
      bounds::Certificate cert;
      cert.metric_id = grid.metric_id;
      cert.k = k;
      cert.epsilon = grid.tolerance_grid[t];
      cert.empirical_risk = r_hat;
      cert.r_bar = r_bar;
      cert.risk_bound = r_star;
      cert.confidence = conf.risk_confidence;
      cert.method = bounds::Method::pac_bayes;
      cert.n_samples = grid.n;
      cert.h_samples = grid.h;
      out.certificates.push_back(cert);
    }
  }
  return out;
}

LearnedCertification certify_learned(const learned::Posterior& posterior,
                                     const learned::Architecture& arch,
                                     const std::vector<fp::Instance>& train_instances,
                                     const CalibrationConfig& cal,
                                     const std::vector<double>& quantiles,
                                     const bounds::PriorGridSpec& grid) {
  const double b_star =
      bounds::regularizer_B(posterior_vs_prior(posterior, arch), grid,
                            static_cast<long>(train_instances.size()), cal.delta);
  const RiskGrid risk = mc_empirical_risk(posterior, arch, train_instances, cal);
  LearnedCertification out = calibrate_bound(risk, b_star, cal);

  const int n_tol = static_cast<int>(risk.tolerance_grid.size());
  for (int k = 0; k <= risk.k_max; ++k) {
    std::map<double, double> by_tol;
    for (int t = 0; t < n_tol; ++t) {
      by_tol[risk.tolerance_grid[t]] =
          out.certificates[static_cast<std::size_t>(k) * n_tol + t].risk_bound;
    }
    for (double q : quantiles) {
      out.quantile_table[{k, q}] = bounds::quantile_from_grid(by_tol, q);
    }
  }
  return out;
}

CrossvalResult crossval_btarget(const learned::Architecture& arch,
                                const training::Batch& train_batch,
                                const std::vector<fp::Instance>& train_instances,
                                const training::LossSpec& loss,
                                training::TrainConfig cfg_base,
                                const std::vector<double>& btarget_grid,
                                const CalibrationConfig& cal,
                                const std::vector<double>& quantiles, int target_k,
                                double target_q) {
  if (btarget_grid.empty()) throw std::invalid_argument("crossval_btarget: empty grid");
  CalibrationConfig cal_cv = cal;
  cal_cv.n_btargets = static_cast<int>(btarget_grid.size());

  CrossvalResult result;
  double best_score = std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (double bt : btarget_grid) {
    training::TrainConfig cfg = cfg_base;
    cfg.b_target = bt;
    training::TrainResult trained = training::train_pacbayes(arch, train_batch, loss, cfg);
    LearnedCertification cert = certify_learned(trained.posterior, arch, train_instances,
                                                cal_cv, quantiles, cfg.grid);
    const auto it = cert.quantile_table.find({target_k, target_q});
    double score = std::numeric_limits<double>::infinity();
    if (it != cert.quantile_table.end() && it->second) score = *it->second;
    result.scores.emplace_back(bt, score);
    if (!have_best || score < best_score) {
      have_best = true;
      best_score = score;
      result.best = std::move(trained);
      result.best_btarget = bt;
      result.best_certification = std::move(cert);
    }
  }
  return result;
}

}  // namespace fpcert::calibration
