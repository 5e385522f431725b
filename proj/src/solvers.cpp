#include "fpcert/solvers.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace fpcert::solvers {

double soft_threshold(double v, double psi) {
  if (v > psi) return v - psi;
  if (v < -psi) return v + psi;
  return 0.0;
}

VectorXd soft_threshold(const VectorXd& v, double psi) {
  VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = soft_threshold(v[i], psi);
  return out;
}

double lmax_gram(const MatrixXd& m) {
  VectorXd v = VectorXd::Ones(m.cols()).normalized();
  double lam = 0.0;
  for (int it = 0; it < 100; ++it) {
    VectorXd w = m.transpose() * (m * v);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    const double prev = lam;
    lam = nw;
    if (it > 0 && std::abs(lam - prev) <= 1e-10 * lam) break;
  }
  return lam;
}

namespace {

class GdOperator final : public fp::FixedPointOperator {
 public:
  GdOperator(MatrixXd p, double gamma, double beta)
      : p_(std::move(p)), gamma_(gamma), beta_(beta) {}

  int dim() const override { return static_cast<int>(p_.rows()); }
  VectorXd apply(const VectorXd& z, const VectorXd& x) const override {
    return z - gamma_ * (p_ * z + x);
  }
  std::optional<fp::OperatorClass> declared_class() const override {
    return fp::OperatorClass{bounds::RateKind::linear, beta_};
  }

 private:
  MatrixXd p_;
  double gamma_, beta_;
};

class IstaOperator final : public fp::FixedPointOperator {
 public:
  IstaOperator(MatrixXd d, double rho, double L)
      : d_(std::move(d)), psi_(rho / L), inv_l_(1.0 / L) {}

  int dim() const override { return static_cast<int>(d_.cols()); }
  VectorXd apply(const VectorXd& z, const VectorXd& x) const override {
    return soft_threshold(z - inv_l_ * (d_.transpose() * (d_ * z - x)), psi_);
  }

 private:
  MatrixXd d_;
  double psi_, inv_l_;
};

class DrBoxQpOperator final : public fp::FixedPointOperator {
 public:
  DrBoxQpOperator(const MatrixXd& p, VectorXd l, VectorXd u,
                  std::optional<AffineParam> map)
      : n_(static_cast<int>(p.rows())),
        l_(std::move(l)),
        u_(std::move(u)),
        map_(std::move(map)) {
    MatrixXd pi = p;
    pi.diagonal().array() += 1.0;
    ldlt_.compute(pi);
    if (ldlt_.info() != Eigen::Success) {
      throw std::runtime_error("dr_boxqp_operator: factorization of P + I failed");
    }
  }

  int dim() const override { return n_; }

  VectorXd apply(const VectorXd& z, const VectorXd& x) const override {
    const VectorXd q = linear_term(x);
    const VectorXd u1 = ldlt_.solve(z - q);
    const VectorXd u2 = (2.0 * u1 - z).cwiseMax(l_).cwiseMin(u_);
    return z + u2 - u1;
  }

  VectorXd solution(const VectorXd& z, const VectorXd& x) const override {
    const VectorXd q = linear_term(x);
    const VectorXd u1 = ldlt_.solve(z - q);
    return (2.0 * u1 - z).cwiseMax(l_).cwiseMin(u_);
  }

  std::optional<fp::OperatorClass> declared_class() const override {
    return fp::OperatorClass{bounds::RateKind::averaged, 0.5};
  }

 private:
  VectorXd linear_term(const VectorXd& x) const {
    if (!map_) return x;
    return map_->qx * x + map_->q0;
  }

  int n_;
  VectorXd l_, u_;
  std::optional<AffineParam> map_;
  Eigen::LDLT<MatrixXd> ldlt_;
};

}  // namespace

std::unique_ptr<fp::FixedPointOperator> gd_operator(const MatrixXd& p, double gamma) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(p);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("gd_operator: eigendecomposition failed");
  }
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(gamma > 0.0) || !(gamma < 2.0 / lmax)) {
    throw std::invalid_argument("gd_operator: step outside (0, 2/lambda_max)");
  }
  const double beta = (1.0 - gamma * es.eigenvalues().array()).abs().maxCoeff();
  return std::make_unique<GdOperator>(p, gamma, beta);
}

std::unique_ptr<fp::FixedPointOperator> ista_operator(const MatrixXd& d, double rho,
                                                      double L) {
  if (rho < 0.0) throw std::invalid_argument("ista_operator: rho < 0");
  if (L <= 0.0) L = lmax_gram(d);
  return std::make_unique<IstaOperator>(d, rho, L);
}

std::vector<VectorXd> fista_run(const MatrixXd& d, const VectorXd& b, double rho,
                                double L, int k_max, bool momentum) {
  if (L <= 0.0) L = lmax_gram(d);
  IstaOperator prox_step(d, rho, L);
  std::vector<VectorXd> out;
  out.reserve(k_max + 1);
  VectorXd z = VectorXd::Zero(d.cols());
  VectorXd y = z;
  double t = 1.0;
  out.push_back(z);
  for (int k = 0; k < k_max; ++k) {
    const VectorXd z_next = prox_step.apply(y, b);
    if (momentum) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = z_next + ((t - 1.0) / t_next) * (z_next - z);
      t = t_next;
    } else {
      y = z_next;
    }
    z = z_next;
    out.push_back(z);
  }
  return out;
}

std::unique_ptr<fp::FixedPointOperator> dr_boxqp_operator(
    const MatrixXd& p, const VectorXd& l, const VectorXd& u,
    std::optional<AffineParam> param_map) {
  if (p.rows() != p.cols() || l.size() != p.rows() || u.size() != p.rows()) {
    throw std::invalid_argument("dr_boxqp_operator: dimension mismatch");
  }
  return std::make_unique<DrBoxQpOperator>(p, l, u, std::move(param_map));
}

VectorXd solve_boxqp_reference(const fp::FixedPointOperator& op, const VectorXd& x,
                               double tol, int max_iter) {
  VectorXd z = VectorXd::Zero(op.dim());
  for (int k = 0; k < max_iter; ++k) {
    VectorXd z_next = op.apply(z, x);
    if ((z_next - z).norm() <= tol) return op.solution(z_next, x);
    z = std::move(z_next);
  }
  throw std::runtime_error("solve_boxqp_reference: no convergence to tolerance");
}

const VectorXd& WarmStartBank::lookup(const VectorXd& x) const {
  if (base_x.empty() || base_x.size() != base_z.size()) {
    throw std::invalid_argument("WarmStartBank: empty or inconsistent bank");
  }
  std::size_t best = 0;
  double best_d = (base_x[0] - x).squaredNorm();
  for (std::size_t i = 1; i < base_x.size(); ++i) {
    const double d = (base_x[i] - x).squaredNorm();
    if (d < best_d) {  // strict: ties keep the lowest index
      best_d = d;
      best = i;
    }
  }
  return base_z[best];
}

fp::WarmStart WarmStartBank::as_warm_start() const {
  return [bank = *this](const fp::Instance& inst) { return bank.lookup(inst.x); };
}

}  // namespace fpcert::solvers
