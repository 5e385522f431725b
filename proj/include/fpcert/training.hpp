#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fpcert/bounds.hpp"
#include "fpcert/learned.hpp"

namespace fpcert::training {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Per-instance training loss. Regression: |z^K - z*|^2 (needs ground
// truths). Objective: the lasso objective 1/2 |Dz^K - x|^2 + rho |z^K|_1.
enum class LossId { regression, objective };

struct LossSpec {
  LossId id = LossId::regression;
  MatrixXd d;      // objective loss only
  double rho = 0;  // objective loss only
};

// Column i of x holds instance i; z_true likewise (regression loss only).
struct Batch {
  MatrixXd x;
  MatrixXd z_true;
};

struct TrainConfig {
  double b_target = 0.05;
  double mu = 1e3;          // penalty weight on (B - B_target)^2
  double learning_rate = 1e-3;
  int epochs = 200;
  bounds::PriorGridSpec grid;
  double delta = 1e-5;
  int k_train = 10;         // unroll depth K used in the loss
  std::uint64_t seed = 0;
};

// Mean over the batch of 1 / (1 + exp(-l_theta(x))). When grad is non-null
// it receives d(mean)/d(theta) via reverse mode through the unrolled
// architecture.
double logistic_risk(const learned::Architecture& arch, const VectorXd& theta,
                     const Batch& batch, const LossSpec& loss, int K,
                     VectorXd* grad = nullptr);

struct TrainState {
  VectorXd w;     // posterior mean
  VectorXd zeta;  // log posterior variances, s = exp(zeta)
  VectorXd nu;    // log prior variances per group, lambda = exp(nu)
  VectorXd adam_m, adam_v;
  int epoch = 0;

  VectorXd s() const { return zeta.array().exp(); }
  VectorXd lambda() const { return nu.array().exp(); }
};

TrainState initial_state(const learned::Architecture& arch, const TrainConfig& cfg);

// Builds the grouped-Gaussian spec at the current state against the
// architecture's prior mean.
kl::GroupedGaussianSpec posterior_spec(const learned::Architecture& arch,
                                       const TrainState& state);

// C(w, s, lambda, w') = kl_inverse(risk(w'), B) + mu (B - B_target)^2 with
// the continuous-relaxation B. w' is the sampled weight vector for this
// epoch.
double penalized_objective(const learned::Architecture& arch, const TrainState& state,
                           const Batch& batch, const LossSpec& loss,
                           const TrainConfig& cfg, long n_train,
                           const VectorXd& w_prime);

struct Gradients {
  VectorXd dw, dzeta, dnu;
};

// Reverse-mode gradients of penalized_objective with w' = w + xi .* sqrt(s):
// the risk term is backpropagated through the architecture and the sampling
// transform, the B terms use the closed-form KL derivatives, and the outer
// kl_inverse is differentiated implicitly.
Gradients grad_penalized(const learned::Architecture& arch, const TrainState& state,
                         const Batch& batch, const LossSpec& loss,
                         const TrainConfig& cfg, long n_train, const VectorXd& xi);

struct TrainLogRow {
  int epoch;
  double sampled_risk, b_value, kl_inverse_term, penalty_term, objective;
};

struct TrainResult {
  learned::Posterior posterior;  // lambda rounded onto the grid
  std::vector<TrainLogRow> log;
};

// Algorithm: M epochs of Adam on (w, zeta, nu) with one fresh xi per epoch,
// clamped to zeta in [-20, log lambda_max] and nu <= log lambda_max - 1/b,
// then round_prior. A non-finite objective aborts with the last finite
// state.
TrainResult train_pacbayes(const learned::Architecture& arch, const Batch& batch,
                           const LossSpec& loss, const TrainConfig& cfg);

void write_training_log(const std::vector<TrainLogRow>& log, const std::string& path);

}  // namespace fpcert::training
