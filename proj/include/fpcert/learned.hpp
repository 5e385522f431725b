#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "fpcert/fixed_point.hpp"
#include "fpcert/rng.hpp"

namespace fpcert::learned {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// An unrolled learned optimizer: a flat weight vector theta drives K
// iteration layers (plus, for the warm-start network, an initialization
// network followed by fixed classical steps). Iterations past the trained
// depth reuse the final layer, so certified curves can extend beyond the
// training horizon.
class Architecture {
 public:
  virtual ~Architecture() = default;

  virtual std::string name() const = 0;
  virtual int theta_len() const = 0;
  virtual int z_dim() const = 0;
  virtual int depth() const = 0;  // trained layer count K

  // Disjoint index partition of theta for the grouped Gaussian prior.
  virtual std::vector<std::vector<int>> groups() const = 0;
  // Prior mean w0 (the classical parameterization of the architecture).
  virtual VectorXd prior_mean() const = 0;

  // Iterates z^0..z^k_max for one parameter x.
  std::vector<VectorXd> iterates(const VectorXd& theta, const VectorXd& x,
                                 int k_max) const;
  // Batched iterates: column i of x_batch is instance i. Returned element k
  // holds z^k for all instances as columns.
  virtual std::vector<MatrixXd> iterates_batch(const VectorXd& theta,
                                               const MatrixXd& x_batch,
                                               int k_max) const = 0;

  // Reverse-mode sum over instances: given dL_i/dz^K in column i of dz_k,
  // returns sum_i dL_i/dtheta. K is the unroll depth used in the loss.
  virtual VectorXd backprop_batch(const VectorXd& theta, const MatrixXd& x_batch,
                                  int K, const MatrixXd& dz_k) const = 0;
};

// Analytic minimizer of |W'D|_F^2 subject to diag(W'D) = 1:
// w_i = (DD')^{-1} d_i / (d_i'(DD')^{-1} d_i).
MatrixXd datafree_W(const MatrixXd& d);

// z^{k+1} = eta_{psi_k}(z^k - gamma_k Wt'(D z^k - x)) with theta = (psi, gamma)
// of length 2K and a fixed analytic Wt. Groups: {psi}, {gamma}. Prior mean is
// the ISTA parameterization psi_k = rho/L, gamma_k = 1/L.
std::unique_ptr<Architecture> make_alista(MatrixXd d, MatrixXd w_tilde, int k_layers,
                                          double rho, double L);

// Same update with a learned Wt: theta = (vec Wt, psi, gamma), length mn + 2K.
// Groups: {Wt}, {psi}, {gamma}. Prior mean: Wt = D plus the ISTA scalars.
std::unique_ptr<Architecture> make_tilista(MatrixXd d, int k_layers, double rho,
                                           double L);

// z^{k+1} = eta_{psi_k}(W1_k z^k + W2_k x); theta per layer is
// (psi_k, vec W1_k, vec W2_k), length K(1 + n^2 + nm). Groups: {psi}, {W1},
// {W2}. Prior mean is the ISTA parameterization with rho = 0.1:
// W1 = I - (1/L)D'D, W2 = (1/L)D'.
std::unique_ptr<Architecture> make_lista(MatrixXd d, int k_layers, double L);

// Warm-start MLP (ReLU hidden layers, linear output) followed by fixed
// gradient-descent steps z - gamma (Pz + x). theta tiles
// (W_0, b_0, ..., W_{L-1}, b_{L-1}); groups: one per W_i and one per b_i
// (J = 2L). Prior mean 0 (the zero warm start).
std::unique_ptr<Architecture> make_l2ws(std::vector<int> layer_dims, MatrixXd p,
                                        double gamma, int k_layers);

// theta = w + xi .* sqrt(s), xi standard normal from rng.
VectorXd sample_weights(const VectorXd& w, const VectorXd& s, Rng& rng);

// Diagonal-Gaussian weight posterior N(w, diag s) with the per-group prior
// variances lambda (on the discrete grid once training has rounded them).
struct Posterior {
  VectorXd w;
  VectorXd s;
  VectorXd lambda;
};

// One MLP layer of a diagonal-Gaussian posterior: means and per-entry
// variances for the weight matrix and bias.
struct LayerPosterior {
  MatrixXd w_mean;
  VectorXd b_mean;
  MatrixXd w_var;
  VectorXd b_var;
};

// High-probability bound on the distance from the warm-start output to the
// solution set: with probability >= 1 - delta over theta,
// |h_theta(x)| <= a_L for all |x| <= x_bar, via the recursion
//   a_0 = x_bar,  a_{i+1} = (|W_i|_2 + |b_i|_2 + tau_i)(a_i + 1),
//   tau_i = v_i sqrt(2 log(L (m_i + n_i + 1) / delta)),
// v_i^2 the largest row/column sum of squares of the per-entry std block
// [sqrt(Sigma_i) sqrt(sigma_i)]. Returns z_bar + a_L.
double l2ws_distance_bound(const std::vector<LayerPosterior>& layers, double x_bar,
                           double z_bar, double delta);

// Split a flat (w, s) pair for an L2WS architecture into per-layer posterior
// views matching l2ws_distance_bound.
std::vector<LayerPosterior> l2ws_layer_posteriors(const std::vector<int>& layer_dims,
                                                  const VectorXd& w, const VectorXd& s);

}  // namespace fpcert::learned
