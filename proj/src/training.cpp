#include "fpcert/training.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fpcert/rng.hpp"

namespace fpcert::training {

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double sign0(double t) { return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0); }

// Maps each theta coordinate to its prior group index.
std::vector<int> group_of(const learned::Architecture& arch) {
  const auto groups = arch.groups();
  std::vector<int> g(arch.theta_len(), -1);
  for (std::size_t j = 0; j < groups.size(); ++j) {
    for (int idx : groups[j]) g[idx] = static_cast<int>(j);
  }
  for (int v : g) {
    if (v < 0) throw std::logic_error("architecture groups do not tile theta");
  }
  return g;
}

}  // namespace

double logistic_risk(const learned::Architecture& arch, const VectorXd& theta,
                     const Batch& batch, const LossSpec& loss, int K, VectorXd* grad) {
  const int n = static_cast<int>(batch.x.cols());
  if (n < 1) throw std::invalid_argument("logistic_risk: empty batch");
  const auto z = arch.iterates_batch(theta, batch.x, K);
  const MatrixXd& zk = z.back();

  MatrixXd dloss;  // d l_i / d z^K, one column per instance
  VectorXd ell(n);
  if (loss.id == LossId::regression) {
    if (batch.z_true.cols() != n) {
      throw std::invalid_argument("logistic_risk: regression loss needs ground truths");
    }
    const MatrixXd diff = zk - batch.z_true;
    ell = diff.colwise().squaredNorm().transpose();
    if (grad) dloss = 2.0 * diff;
  } else {
    const MatrixXd r = loss.d * zk - batch.x;
    ell = (0.5 * r.colwise().squaredNorm().array() +
           loss.rho * zk.cwiseAbs().colwise().sum().array())
              .transpose();
    if (grad) {
      dloss = loss.d.transpose() * r +
              loss.rho * zk.unaryExpr([](double t) { return sign0(t); });
    }
  }

  double risk = 0.0;
  for (int i = 0; i < n; ++i) risk += sigmoid(ell[i]);
  risk /= n;

  if (grad) {
    for (int i = 0; i < n; ++i) {
      const double s = sigmoid(ell[i]);
      dloss.col(i) *= s * (1.0 - s) / n;
    }
    *grad = arch.backprop_batch(theta, batch.x, K, dloss);
  }
  return risk;
}

TrainState initial_state(const learned::Architecture& arch, const TrainConfig& cfg) {
  const int p = arch.theta_len();
  const int J = static_cast<int>(arch.groups().size());
  TrainState st;
  st.w = arch.prior_mean();
  st.zeta = VectorXd::Constant(p, std::log(1e-4));
  st.nu = VectorXd::Constant(J, std::log(cfg.grid.lambda_max) - 1.0 / cfg.grid.b);
  st.adam_m = VectorXd::Zero(2 * p + J);
  st.adam_v = VectorXd::Zero(2 * p + J);
  return st;
}

kl::GroupedGaussianSpec posterior_spec(const learned::Architecture& arch,
                                       const TrainState& state) {
  kl::GroupedGaussianSpec spec;
  spec.w = state.w;
  spec.s = state.s();
  spec.w0 = arch.prior_mean();
  spec.groups = arch.groups();
  spec.lambda = state.lambda();
  return spec;
}

double penalized_objective(const learned::Architecture& arch, const TrainState& state,
                           const Batch& batch, const LossSpec& loss,
                           const TrainConfig& cfg, long n_train,
                           const VectorXd& w_prime) {
  const double q = logistic_risk(arch, w_prime, batch, loss, cfg.k_train);
  const double b =
      bounds::regularizer_B_continuous(posterior_spec(arch, state), cfg.grid, n_train,
                                       cfg.delta);
  return kl::kl_inverse(q, b) + cfg.mu * (b - cfg.b_target) * (b - cfg.b_target);
}

Gradients grad_penalized(const learned::Architecture& arch, const TrainState& state,
                         const Batch& batch, const LossSpec& loss,
                         const TrainConfig& cfg, long n_train, const VectorXd& xi) {
  const int p = arch.theta_len();
  const VectorXd s = state.s();
  const VectorXd lambda = state.lambda();
  const VectorXd w0 = arch.prior_mean();
  const auto groups = arch.groups();
  const auto gidx = group_of(arch);
  const double nn = static_cast<double>(n_train);

  const VectorXd sqrt_s = s.cwiseSqrt();
  const VectorXd w_prime = state.w + xi.cwiseProduct(sqrt_s);

  VectorXd dq_dtheta;
  const double q = logistic_risk(arch, w_prime, batch, loss, cfg.k_train, &dq_dtheta);
  const double b =
      bounds::regularizer_B_continuous(posterior_spec(arch, state), cfg.grid, n_train,
                                       cfg.delta);
  const auto kg = kl::kl_inverse_grad(q, b);
  const double db_total = kg.dc + 2.0 * cfg.mu * (b - cfg.b_target);

  Gradients g;
  g.dw = VectorXd::Zero(p);
  g.dzeta = VectorXd::Zero(p);
  for (int i = 0; i < p; ++i) {
    const double lam = lambda[gidx[i]];
    g.dw[i] = kg.dq * dq_dtheta[i] + db_total * (state.w[i] - w0[i]) / (lam * nn);
    g.dzeta[i] = kg.dq * dq_dtheta[i] * 0.5 * xi[i] * sqrt_s[i] +
                 db_total * 0.5 * (s[i] / lam - 1.0) / nn;
  }

  g.dnu = VectorXd::Zero(lambda.size());
  for (std::size_t j = 0; j < groups.size(); ++j) {
    double mass = 0.0;  // |s_Ij|_1 + |w_Ij - w0_Ij|^2
    for (int idx : groups[j]) {
      const double dwi = state.w[idx] - w0[idx];
      mass += s[idx] + dwi * dwi;
    }
    const double lam = lambda[j];
    const double a = cfg.grid.b * (std::log(cfg.grid.lambda_max) - state.nu[j]);
    const double dkl = 0.5 * (static_cast<double>(groups[j].size()) - mass / lam);
    g.dnu[j] = db_total * (dkl - 2.0 * cfg.grid.b / a) / nn;
  }
  return g;
}

TrainResult train_pacbayes(const learned::Architecture& arch, const Batch& batch,
                           const LossSpec& loss, const TrainConfig& cfg) {
  const int p = arch.theta_len();
  const int J = static_cast<int>(arch.groups().size());
  const long n_train = batch.x.cols();
  const double zeta_lo = -20.0, zeta_hi = std::log(cfg.grid.lambda_max);
  const double nu_hi = std::log(cfg.grid.lambda_max) - 1.0 / cfg.grid.b;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  TrainState st = initial_state(arch, cfg);
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, stream::train_epoch, static_cast<std::uint64_t>(epoch));
    VectorXd xi(p);
    for (int i = 0; i < p; ++i) xi[i] = rng.next_normal();
    const VectorXd w_prime = st.w + xi.cwiseProduct(st.s().cwiseSqrt());

    const double q = logistic_risk(arch, w_prime, batch, loss, cfg.k_train);
    const double b = bounds::regularizer_B_continuous(posterior_spec(arch, st), cfg.grid,
                                                      n_train, cfg.delta);
    const double kl_term = kl::kl_inverse(q, b);
    const double pen = cfg.mu * (b - cfg.b_target) * (b - cfg.b_target);
    const double obj = kl_term + pen;
    if (!std::isfinite(obj)) break;  // keep the last finite state
    result.log.push_back({epoch, q, b, kl_term, pen, obj});

    const Gradients g = grad_penalized(arch, st, batch, loss, cfg, n_train, xi);
    VectorXd flat(2 * p + J);
    flat << g.dw, g.dzeta, g.dnu;
    if (!flat.allFinite()) break;

    const double t = static_cast<double>(epoch + 1);
    st.adam_m = kBeta1 * st.adam_m + (1.0 - kBeta1) * flat;
    st.adam_v = kBeta2 * st.adam_v + (1.0 - kBeta2) * flat.cwiseProduct(flat);
    const VectorXd m_hat = st.adam_m / (1.0 - std::pow(kBeta1, t));
    const VectorXd v_hat = st.adam_v / (1.0 - std::pow(kBeta2, t));
    VectorXd denom = v_hat.cwiseSqrt();
    denom.array() += kEps;
    const VectorXd step = cfg.learning_rate * m_hat.cwiseQuotient(denom);

    st.w -= step.head(p);
    st.zeta -= step.segment(p, p);
    st.nu -= step.tail(J);
    st.zeta = st.zeta.cwiseMax(zeta_lo).cwiseMin(zeta_hi);
    st.nu = st.nu.cwiseMin(nu_hi);
    st.epoch = epoch + 1;
  }

  result.posterior.w = st.w;
  result.posterior.s = st.s();
  result.posterior.lambda = bounds::round_prior(st.lambda(), cfg.grid);
  return result;
}

void write_training_log(const std::vector<TrainLogRow>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_training_log: cannot open " + path);
  out << "epoch,sampled_risk,B_value,kl_inverse_term,penalty_term,objective\n";
  out.precision(17);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.sampled_risk << ',' << r.b_value << ','
        << r.kl_inverse_term << ',' << r.penalty_term << ',' << r.objective << '\n';
  }
}

}  // namespace fpcert::training
