#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "fpcert/problems.hpp"
#include "fpcert/rng.hpp"
#include "fpcert/solvers.hpp"
#include "fpcert/training.hpp"

using namespace fpcert;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Setup {
  problems::ParametricFamily fam;
  std::unique_ptr<learned::Architecture> arch;
  training::Batch batch;
  training::LossSpec loss;
};

Setup make_setup(int n_train, int k_layers, std::uint64_t seed,
                 training::LossId loss_id = training::LossId::regression) {
  Setup s{problems::gen_sparse_coding(6, 10, 0.25, 40.0, 0.2, seed), nullptr, {}, {}};
  const double L = solvers::lmax_gram(s.fam.dictionary);
  s.arch = learned::make_alista(s.fam.dictionary, learned::datafree_W(s.fam.dictionary),
                                k_layers, s.fam.rho, L);
  s.batch.x.resize(6, n_train);
  s.batch.z_true.resize(10, n_train);
  for (int i = 0; i < n_train; ++i) {
    const auto inst = s.fam.instance(i);
    s.batch.x.col(i) = inst.x;
    s.batch.z_true.col(i) = *inst.z_true;
  }
  s.loss.id = loss_id;
  if (loss_id == training::LossId::objective) {
    s.loss.d = s.fam.dictionary;
    s.loss.rho = s.fam.rho;
  }
  return s;
}

VectorXd random_vector(int n, std::uint64_t seed, double scale) {
  Rng rng(seed, stream::test_misc, 60);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.next_normal();
  return v;
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

TEST_CASE("logistic risk equals the mean sigmoid of per-instance losses") {
  auto s = make_setup(5, 4, 101);
  const VectorXd theta = s.arch->prior_mean();
  const int K = 4;
  const double risk = training::logistic_risk(*s.arch, theta, s.batch, s.loss, K);
  // duplicate loop over single-instance rollouts
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) {
    const auto traj = s.arch->iterates(theta, s.batch.x.col(i), K);
    expected += sigmoid((traj.back() - s.batch.z_true.col(i)).squaredNorm());
  }
  expected /= 5.0;
  CHECK(risk == doctest::Approx(expected).epsilon(1e-13));
  CHECK(risk > 0.5);  // squared error is nonnegative, so the sigmoid is above 1/2
  CHECK(risk < 1.0);
}

TEST_CASE("objective loss uses the lasso value of the final iterate") {
  auto s = make_setup(4, 3, 102, training::LossId::objective);
  const VectorXd theta = s.arch->prior_mean();
  const double risk = training::logistic_risk(*s.arch, theta, s.batch, s.loss, 3);
  double expected = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto traj = s.arch->iterates(theta, s.batch.x.col(i), 3);
    const double obj = 0.5 * (s.fam.dictionary * traj.back() - s.batch.x.col(i)).squaredNorm() +
                       s.fam.rho * traj.back().lpNorm<1>();
    expected += sigmoid(obj);
  }
  CHECK(risk == doctest::Approx(expected / 4.0).epsilon(1e-13));
}

TEST_CASE("logistic risk saturates for terrible parameters") {
  auto s = make_setup(3, 2, 103);
  VectorXd theta = s.arch->prior_mean();
  theta[2] = 1e5;
  theta[3] = 1e5;  // gamma entries blow the iterates up
  const double risk = training::logistic_risk(*s.arch, theta, s.batch, s.loss, 2);
  CHECK(risk == doctest::Approx(1.0).epsilon(1e-9));
  // zero-depth network recovers nothing but is still a valid half point
  const auto zero = learned::make_alista(s.fam.dictionary, s.fam.dictionary, 0, 0.2, 1.0);
  training::Batch exact;
  exact.x = s.batch.x;
  exact.z_true = MatrixXd::Zero(10, 3);  // ground truth equals the frozen iterate
  CHECK(training::logistic_risk(*zero, VectorXd(0), exact, s.loss, 2) ==
        doctest::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("logistic risk gradient matches finite differences") {
  for (auto loss_id : {training::LossId::regression, training::LossId::objective}) {
    auto s = make_setup(4, 3, 104, loss_id);
    const VectorXd theta =
        s.arch->prior_mean() + random_vector(s.arch->theta_len(), 105, 0.02);
    VectorXd grad;
    (void)training::logistic_risk(*s.arch, theta, s.batch, s.loss, 3, &grad);
    REQUIRE(grad.size() == theta.size());
    const double h = 1e-6;
    for (int i = 0; i < theta.size(); ++i) {
      VectorXd tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      const double fd = (training::logistic_risk(*s.arch, tp, s.batch, s.loss, 3) -
                         training::logistic_risk(*s.arch, tm, s.batch, s.loss, 3)) /
                        (2 * h);
      CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
    }
  }
}

TEST_CASE("initial state starts at the prior") {
  auto s = make_setup(3, 4, 106);
  training::TrainConfig cfg;
  const auto st = training::initial_state(*s.arch, cfg);
  CHECK((st.w - s.arch->prior_mean()).norm() == 0.0);
  CHECK(st.s()[0] == doctest::Approx(1e-4));
  CHECK(st.lambda()[0] ==
        doctest::Approx(cfg.grid.lambda_max * std::exp(-1.0 / cfg.grid.b)));
  CHECK(st.lambda().size() == 2);  // alista groups psi and gamma
  CHECK(st.adam_m.size() == 2 * s.arch->theta_len() + 2);
  // the initial prior already sits on the grid
  const auto spec = training::posterior_spec(*s.arch, st);
  CHECK_NOTHROW((void)bounds::regularizer_B(spec, cfg.grid, 100, cfg.delta));
}

TEST_CASE("penalty vanishes at the target and scales linearly in mu") {
  auto s = make_setup(8, 3, 107);
  training::TrainConfig cfg;
  cfg.k_train = 3;
  auto st = training::initial_state(*s.arch, cfg);
  st.w += random_vector(st.w.size(), 108, 0.01);
  const VectorXd xi = random_vector(st.w.size(), 109, 1.0);
  const VectorXd w_prime = st.w + xi.cwiseProduct(st.s().cwiseSqrt());

  const double b = bounds::regularizer_B_continuous(training::posterior_spec(*s.arch, st),
                                                    cfg.grid, 8, cfg.delta);
  const double q = training::logistic_risk(*s.arch, w_prime, s.batch, s.loss, 3);

  cfg.b_target = b;  // exact target: only the kl-inverse term remains
  CHECK(training::penalized_objective(*s.arch, st, s.batch, s.loss, cfg, 8, w_prime) ==
        doctest::Approx(kl::kl_inverse(q, b)).epsilon(1e-12));

  cfg.b_target = b - 0.5;
  cfg.mu = 0.0;
  const double no_pen =
      training::penalized_objective(*s.arch, st, s.batch, s.loss, cfg, 8, w_prime);
  cfg.mu = 1e3;
  const double with_pen =
      training::penalized_objective(*s.arch, st, s.batch, s.loss, cfg, 8, w_prime);
  CHECK(with_pen - no_pen == doctest::Approx(1e3 * 0.25).epsilon(1e-9));
}

TEST_CASE("penalized gradients match finite differences through the sampling transform") {
  auto s = make_setup(8, 3, 110);
  training::TrainConfig cfg;
  cfg.k_train = 3;
  cfg.b_target = 0.3;
  cfg.mu = 10.0;
  auto st = training::initial_state(*s.arch, cfg);
  st.w += random_vector(st.w.size(), 111, 0.01);
  st.zeta.array() += 0.3;
  st.nu.array() -= 0.2;
  const VectorXd xi = random_vector(st.w.size(), 112, 1.0);

  const auto g = training::grad_penalized(*s.arch, st, s.batch, s.loss, cfg, 8, xi);
  auto objective_at = [&](const training::TrainState& state) {
    const VectorXd w_prime = state.w + xi.cwiseProduct(state.s().cwiseSqrt());
    return training::penalized_objective(*s.arch, state, s.batch, s.loss, cfg, 8, w_prime);
  };
  const double h = 1e-6;
  for (int i = 0; i < st.w.size(); ++i) {
    auto sp = st, sm = st;
    sp.w[i] += h;
    sm.w[i] -= h;
    CHECK(g.dw[i] ==
          doctest::Approx((objective_at(sp) - objective_at(sm)) / (2 * h))
              .epsilon(1e-4).scale(1e-2));
    sp = st;
    sm = st;
    sp.zeta[i] += h;
    sm.zeta[i] -= h;
    CHECK(g.dzeta[i] ==
          doctest::Approx((objective_at(sp) - objective_at(sm)) / (2 * h))
              .epsilon(1e-4).scale(1e-2));
  }
  for (int j = 0; j < st.nu.size(); ++j) {
    auto sp = st, sm = st;
    sp.nu[j] += h;
    sm.nu[j] -= h;
    CHECK(g.dnu[j] ==
          doctest::Approx((objective_at(sp) - objective_at(sm)) / (2 * h))
              .epsilon(1e-4).scale(1e-2));
  }
}

TEST_CASE("the regularizer mean-gradient vanishes at the prior mean") {
  auto s = make_setup(8, 3, 113);
  training::TrainConfig cfg;
  cfg.k_train = 3;
  cfg.mu = 1e3;
  const auto st = training::initial_state(*s.arch, cfg);  // w = w0
  const VectorXd xi = VectorXd::Zero(st.w.size());        // isolate the B path
  const auto g = training::grad_penalized(*s.arch, st, s.batch, s.loss, cfg, 8, xi);
  // with xi = 0 the risk is flat in zeta, and dB/dw = (w - w0)/lambda = 0,
  // so dw carries only the risk term while dzeta is pure regularizer
  VectorXd risk_grad;
  (void)training::logistic_risk(*s.arch, st.w, s.batch, s.loss, 3, &risk_grad);
  const double b = bounds::regularizer_B_continuous(training::posterior_spec(*s.arch, st),
                                                    cfg.grid, 8, cfg.delta);
  const double q = training::logistic_risk(*s.arch, st.w, s.batch, s.loss, 3);
  const auto kg = kl::kl_inverse_grad(q, b);
  for (int i = 0; i < st.w.size(); ++i) {
    CHECK(g.dw[i] == doctest::Approx(kg.dq * risk_grad[i]).epsilon(1e-10).scale(1e-6));
  }
}

TEST_CASE("training runs deterministically and lands the prior on the grid") {
  auto s = make_setup(12, 3, 114);
  training::TrainConfig cfg;
  cfg.epochs = 30;
  cfg.k_train = 3;
  cfg.b_target = 0.4;
  cfg.seed = 7;
  const auto r1 = training::train_pacbayes(*s.arch, s.batch, s.loss, cfg);
  const auto r2 = training::train_pacbayes(*s.arch, s.batch, s.loss, cfg);
  REQUIRE(r1.log.size() == 30);
  CHECK((r1.posterior.w - r2.posterior.w).norm() == 0.0);
  CHECK((r1.posterior.s - r2.posterior.s).norm() == 0.0);
  CHECK((r1.posterior.lambda - r2.posterior.lambda).norm() == 0.0);
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].objective == r2.log[i].objective);
    CHECK(std::isfinite(r1.log[i].objective));
    CHECK(r1.log[i].epoch == static_cast<int>(i));
  }
  // rounded prior variances sit exactly on the published grid
  for (int j = 0; j < r1.posterior.lambda.size(); ++j) {
    const double a = cfg.grid.b * std::log(cfg.grid.lambda_max / r1.posterior.lambda[j]);
    CHECK(a == doctest::Approx(std::round(a)).epsilon(1e-9));
  }
  // a different seed draws different epoch noise
  cfg.seed = 8;
  const auto r3 = training::train_pacbayes(*s.arch, s.batch, s.loss, cfg);
  CHECK((r1.posterior.w - r3.posterior.w).norm() > 0.0);
}

TEST_CASE("zero epochs returns the initialization unchanged") {
  auto s = make_setup(5, 2, 115);
  training::TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = training::train_pacbayes(*s.arch, s.batch, s.loss, cfg);
  CHECK(r.log.empty());
  CHECK((r.posterior.w - s.arch->prior_mean()).norm() == 0.0);
  CHECK(r.posterior.s[0] == doctest::Approx(1e-4));
  CHECK(r.posterior.lambda[0] ==
        doctest::Approx(cfg.grid.lambda_max * std::exp(-1.0 / cfg.grid.b)));
}

TEST_CASE("longer training does not worsen the certified objective") {
  auto s = make_setup(16, 4, 116);
  training::TrainConfig cfg;
  cfg.epochs = 150;
  cfg.k_train = 4;
  cfg.b_target = 0.5;
  cfg.seed = 3;
  const auto r = training::train_pacbayes(*s.arch, s.batch, s.loss, cfg);
  REQUIRE(r.log.size() == 150);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 10; ++i) early += r.log[i].objective;
  for (int i = 140; i < 150; ++i) late += r.log[i].objective;
  CHECK(late <= early);
}

TEST_CASE("training log serializes with the documented header") {
  const auto path =
      (std::filesystem::temp_directory_path() / "fpcert_train_log.csv").string();
  std::vector<training::TrainLogRow> log{{0, 0.5, 0.1, 0.6, 0.0, 0.6},
                                         {1, 0.4, 0.11, 0.55, 0.001, 0.551}};
  training::write_training_log(log, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,sampled_risk,B_value,kl_inverse_term,penalty_term,objective");
  std::string row;
  std::getline(in, row);
  CHECK(row.substr(0, 6) == "0,0.5,");
  int lines = 1;
  while (std::getline(in, row)) ++lines;
  CHECK(lines == 2);
  std::remove(path.c_str());
  CHECK_THROWS_AS(training::write_training_log(log, "/nonexistent/dir/x.csv"),
                  std::runtime_error);
}
