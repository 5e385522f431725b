#pragma once

#include <Eigen/Dense>
#include <vector>

namespace fpcert::kl {

// KL divergence between Bernoulli(q) and Bernoulli(p), with the endpoint
// conventions kl(0||p) = -log(1-p), kl(1||p) = -log p and 0*log 0 = 0.
// Throws std::domain_error when the divergence is infinite (p in {0,1} with
// q in the interior, or q on the opposite endpoint).
double bernoulli_kl(double q, double p);

// Largest p in [0,1] with kl(q||p) <= c, found by bisection on [q, 1).
// Returns exactly 1 once the budget c exceeds kl(q || 1 - 1e-15).
double kl_inverse(double q, double c);

// Pinsker's explicit upper bound q + sqrt(c/2). May exceed 1.
double pinsker_upper(double q, double c);

struct KlInverseGrad {
  double dq;
  double dc;
};

// Implicit derivatives of kl_inverse at (q, c), valid for q in (0,1), c > 0.
KlInverseGrad kl_inverse_grad(double q, double c);

// Diagonal-Gaussian posterior against a grouped diagonal prior: the posterior
// is N(w, diag(s)); the prior is N(w0, Lambda) where Lambda assigns the value
// lambda[j] to every index in groups[j].
struct GroupedGaussianSpec {
  Eigen::VectorXd w;
  Eigen::VectorXd s;
  Eigen::VectorXd w0;
  std::vector<std::vector<int>> groups;
  Eigen::VectorXd lambda;

  void validate() const;  // throws std::invalid_argument on violation
};

// KL(N(w, diag s) || N(w0, Lambda)) in the grouped closed form
//   -1/2 (p + sum log s) + 1/2 sum_j [ |s_Ij|_1/lambda_j
//        + |w_Ij - w0_Ij|^2/lambda_j + |Ij| log lambda_j ].
double gaussian_kl_grouped(const GroupedGaussianSpec& spec);

}  // namespace fpcert::kl
