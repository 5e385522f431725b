#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "fpcert/fixed_point.hpp"

namespace fpcert::solvers {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// eta_psi(v) = sign(v) max(0, |v| - psi), elementwise. psi >= 0.
double soft_threshold(double v, double psi);
VectorXd soft_threshold(const VectorXd& v, double psi);

// Largest eigenvalue of M^T M by power iteration (100 iterations or relative
// change below 1e-10).
double lmax_gram(const MatrixXd& m);

// Gradient descent on 1/2 z'Pz + c'z: T(z, c) = z - gamma (Pz + c).
// Declared linearly convergent with beta = max_i |1 - gamma lambda_i(P)|.
// Requires 0 < gamma < 2 / lambda_max(P).
std::unique_ptr<fp::FixedPointOperator> gd_operator(const MatrixXd& p, double gamma);

// ISTA for the lasso 1/2 |Dz - b|^2 + rho |z|_1 with parameter x = b:
// T(z, b) = eta_{rho/L}(z - (1/L) D'(Dz - b)). Requires L >= lambda_max(D'D);
// pass L <= 0 to compute it by power iteration.
std::unique_ptr<fp::FixedPointOperator> ista_operator(const MatrixXd& d, double rho,
                                                      double L = 0.0);

// FISTA primal iterates z^0..z^k_max from z^0 = 0, standard momentum
// t_{k+1} = (1 + sqrt(1 + 4 t_k^2))/2. With momentum off (t_k = 1) this is
// exactly ISTA.
std::vector<VectorXd> fista_run(const MatrixXd& d, const VectorXd& b, double rho,
                                double L, int k_max, bool momentum = true);

// Affine translation of the family parameter x into the QP linear term:
// q = qx * x + q0. Defaults to the identity (the parameter is q itself).
struct AffineParam {
  MatrixXd qx;
  VectorXd q0;
};

// Douglas-Rachford splitting for min 1/2 z'Pz + q'z over the box [l, u]:
//   u1 = (P+I)^{-1}(z - q);  u2 = clamp(2 u1 - z, l, u);  z+ = z + u2 - u1.
// Declared 1/2-averaged; solution extraction returns u2. (P+I) is factored
// once (LDLT). l/u entries may be +-inf.
std::unique_ptr<fp::FixedPointOperator> dr_boxqp_operator(
    const MatrixXd& p, const VectorXd& l, const VectorXd& u,
    std::optional<AffineParam> param_map = std::nullopt);

// Run a DR box-QP operator until fp_residual <= tol; returns the extracted
// solution u2. Used for on-demand ground truths.
VectorXd solve_boxqp_reference(const fp::FixedPointOperator& op, const VectorXd& x,
                               double tol = 1e-10, int max_iter = 2000000);

// Nearest-neighbor warm start: the stored solution of the base parameter
// closest to x in Euclidean norm, ties broken by lowest index.
struct WarmStartBank {
  std::vector<VectorXd> base_x;
  std::vector<VectorXd> base_z;

  const VectorXd& lookup(const VectorXd& x) const;
  fp::WarmStart as_warm_start() const;
};

}  // namespace fpcert::solvers
