#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "fpcert/learned.hpp"
#include "fpcert/problems.hpp"
#include "fpcert/rng.hpp"
#include "fpcert/solvers.hpp"

using namespace fpcert;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_batch(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed, stream::test_misc, 50);
  MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = rng.next_normal();
  }
  return m;
}

VectorXd random_vector(int n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed, stream::test_misc, 51);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.next_normal();
  return v;
}

// Scalar probe loss f(theta) = sum_ij C_ij z^K_ij used to compare
// backprop_batch against central finite differences.
double probe_loss(const learned::Architecture& arch, const VectorXd& theta,
                  const MatrixXd& x, int K, const MatrixXd& c) {
  return arch.iterates_batch(theta, x, K).back().cwiseProduct(c).sum();
}

void check_backprop_against_fd(const learned::Architecture& arch, const VectorXd& theta,
                               const MatrixXd& x, int K, std::uint64_t seed) {
  const MatrixXd c = random_batch(arch.z_dim(), static_cast<int>(x.cols()), seed);
  const VectorXd grad = arch.backprop_batch(theta, x, K, c);
  REQUIRE(grad.size() == theta.size());
  const double h = 1e-6;
  for (int i = 0; i < theta.size(); ++i) {
    VectorXd tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const double fd = (probe_loss(arch, tp, x, K, c) - probe_loss(arch, tm, x, K, c)) / (2 * h);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }
}

}  // namespace

TEST_CASE("datafree analytic weights satisfy their optimality conditions") {
  const auto fam = problems::gen_sparse_coding(8, 14, 0.2, 40.0, 0.1, 61);
  const MatrixXd& d = fam.dictionary;
  const MatrixXd w = learned::datafree_W(d);
  const MatrixXd wd = w.transpose() * d;
  for (int i = 0; i < 14; ++i) {
    CHECK(wd(i, i) == doctest::Approx(1.0).epsilon(1e-10));
  }
  // each column solves min_w sum_j (w'd_j)^2 s.t. w'd_i = 1: any feasible
  // perturbation (orthogonal to d_i) must not lower the coherence objective
  Rng rng(1, stream::test_misc, 52);
  for (int i = 0; i < 14; ++i) {
    const double base = (d.transpose() * w.col(i)).squaredNorm();
    for (int t = 0; t < 5; ++t) {
      VectorXd delta = random_vector(8, 200 + 14 * t + i, 1e-3);
      delta -= delta.dot(d.col(i)) / d.col(i).squaredNorm() * d.col(i);
      const double perturbed = (d.transpose() * (w.col(i) + delta)).squaredNorm();
      CHECK(perturbed >= base - 1e-12);
    }
  }
}

TEST_CASE("alista at its prior mean runs plain ista") {
  const auto fam = problems::gen_sparse_coding(6, 10, 0.2, 40.0, 0.2, 62);
  const double L = solvers::lmax_gram(fam.dictionary);
  const int K = 20;
  // W~ = D makes the update identical to the classical operator
  const auto arch = learned::make_alista(fam.dictionary, fam.dictionary, K, fam.rho, L);
  const auto inst = fam.instance(0);
  const auto traj = arch->iterates(arch->prior_mean(), inst.x, K);
  const auto ref = solvers::fista_run(fam.dictionary, inst.x, fam.rho, L, K, false);
  REQUIRE(traj.size() == ref.size());
  for (int k = 0; k <= K; ++k) {
    CHECK((traj[k] - ref[k]).norm() == doctest::Approx(0.0).epsilon(1e-13));
  }
}

TEST_CASE("tilista at its prior mean runs plain ista") {
  const auto fam = problems::gen_sparse_coding(6, 10, 0.2, 40.0, 0.2, 63);
  const double L = solvers::lmax_gram(fam.dictionary);
  const int K = 15;
  const auto arch = learned::make_tilista(fam.dictionary, K, fam.rho, L);
  REQUIRE(arch->theta_len() == 60 + 2 * K);
  const auto inst = fam.instance(1);
  const auto traj = arch->iterates(arch->prior_mean(), inst.x, K);
  const auto ref = solvers::fista_run(fam.dictionary, inst.x, fam.rho, L, K, false);
  for (int k = 0; k <= K; ++k) {
    CHECK((traj[k] - ref[k]).norm() == doctest::Approx(0.0).epsilon(1e-13));
  }
}

TEST_CASE("lista at its prior mean runs ista with the reference penalty") {
  const auto fam = problems::gen_sparse_coding(5, 8, 0.2, 40.0, 0.1, 64);
  const double L = solvers::lmax_gram(fam.dictionary);
  const int K = 12;
  const auto arch = learned::make_lista(fam.dictionary, K, L);
  REQUIRE(arch->theta_len() == K * (1 + 64 + 40));
  const auto inst = fam.instance(2);
  const auto traj = arch->iterates(arch->prior_mean(), inst.x, K);
  // the prior encodes rho = 0.1 regardless of the family's rho
  const auto ref = solvers::fista_run(fam.dictionary, inst.x, 0.1, L, K, false);
  for (int k = 0; k <= K; ++k) {
    CHECK((traj[k] - ref[k]).norm() == doctest::Approx(0.0).epsilon(5e-12).scale(1.0));
  }
}

TEST_CASE("iterates beyond the trained depth reuse the last layer") {
  const auto fam = problems::gen_sparse_coding(6, 9, 0.2, 40.0, 0.2, 65);
  const double L = solvers::lmax_gram(fam.dictionary);
  const int K = 3;
  const auto arch = learned::make_alista(fam.dictionary, fam.dictionary, K, fam.rho, L);
  VectorXd theta = arch->prior_mean() + random_vector(arch->theta_len(), 66, 0.01);
  const auto inst = fam.instance(0);
  const auto traj = arch->iterates(theta, inst.x, K + 4);
  const double psi = theta[K - 1], gamma = theta[2 * K - 1];
  for (int k = K; k < K + 4; ++k) {
    const VectorXd pre =
        traj[k] - gamma * (fam.dictionary.transpose() * (fam.dictionary * traj[k] - inst.x));
    CHECK((traj[k + 1] - solvers::soft_threshold(pre, psi)).norm() ==
          doctest::Approx(0.0).epsilon(1e-13));
  }
}

TEST_CASE("a huge threshold freezes every iterate at zero") {
  const auto fam = problems::gen_sparse_coding(6, 9, 0.2, 40.0, 0.2, 67);
  const double L = solvers::lmax_gram(fam.dictionary);
  const auto arch = learned::make_alista(fam.dictionary, fam.dictionary, 4, fam.rho, L);
  VectorXd theta = arch->prior_mean();
  for (int k = 0; k < 4; ++k) theta[k] = 1e6;  // psi entries
  const auto traj = arch->iterates(theta, fam.instance(0).x, 6);
  for (const auto& z : traj) CHECK(z.norm() == 0.0);
}

TEST_CASE("zero-depth architectures are inert") {
  const auto fam = problems::gen_sparse_coding(4, 6, 0.3, 40.0, 0.2, 68);
  const double L = solvers::lmax_gram(fam.dictionary);
  const auto arch = learned::make_alista(fam.dictionary, fam.dictionary, 0, fam.rho, L);
  CHECK(arch->theta_len() == 0);
  const MatrixXd x = random_batch(4, 3, 69);
  const auto traj = arch->iterates_batch(VectorXd(0), x, 5);
  REQUIRE(traj.size() == 6);
  for (const auto& z : traj) CHECK(z.norm() == 0.0);
  CHECK(arch->backprop_batch(VectorXd(0), x, 5, MatrixXd::Zero(6, 3)).size() == 0);
}

TEST_CASE("group partitions tile theta exactly") {
  const auto fam = problems::gen_sparse_coding(5, 7, 0.2, 40.0, 0.1, 70);
  const double L = solvers::lmax_gram(fam.dictionary);
  std::vector<std::unique_ptr<learned::Architecture>> archs;
  archs.push_back(learned::make_alista(fam.dictionary, fam.dictionary, 3, fam.rho, L));
  archs.push_back(learned::make_tilista(fam.dictionary, 3, fam.rho, L));
  archs.push_back(learned::make_lista(fam.dictionary, 2, L));
  archs.push_back(learned::make_l2ws({5, 4, 3}, MatrixXd::Identity(3, 3), 0.1, 2));
  for (const auto& arch : archs) {
    std::vector<int> seen(arch->theta_len(), 0);
    for (const auto& g : arch->groups()) {
      for (int idx : g) {
        REQUIRE(idx >= 0);
        REQUIRE(idx < arch->theta_len());
        ++seen[idx];
      }
    }
    for (int c : seen) CHECK(c == 1);
    CHECK(arch->prior_mean().size() == arch->theta_len());
  }
}

TEST_CASE("threshold network gradients match finite differences") {
  const auto fam = problems::gen_sparse_coding(5, 8, 0.25, 40.0, 0.2, 71);
  const double L = solvers::lmax_gram(fam.dictionary);
  const MatrixXd x = random_batch(5, 4, 72);
  {
    const auto arch = learned::make_alista(fam.dictionary, fam.dictionary, 3, fam.rho, L);
    const VectorXd theta = arch->prior_mean() + random_vector(arch->theta_len(), 73, 0.02);
    check_backprop_against_fd(*arch, theta, x, 3, 74);
    check_backprop_against_fd(*arch, theta, x, 5, 75);  // reused final layer
  }
  {
    const auto arch = learned::make_tilista(fam.dictionary, 3, fam.rho, L);
    const VectorXd theta = arch->prior_mean() + random_vector(arch->theta_len(), 76, 0.02);
    check_backprop_against_fd(*arch, theta, x, 3, 77);
  }
}

TEST_CASE("lista gradients match finite differences") {
  const auto fam = problems::gen_sparse_coding(4, 6, 0.3, 40.0, 0.1, 78);
  const double L = solvers::lmax_gram(fam.dictionary);
  const MatrixXd x = random_batch(4, 3, 79);
  const auto arch = learned::make_lista(fam.dictionary, 2, L);
  const VectorXd theta = arch->prior_mean() + random_vector(arch->theta_len(), 80, 0.02);
  check_backprop_against_fd(*arch, theta, x, 2, 81);
}

TEST_CASE("warm-start network forward pass composes mlp and descent steps") {
  const MatrixXd p = 2.0 * MatrixXd::Identity(2, 2);
  const auto arch = learned::make_l2ws({2, 3, 2}, p, 0.1, 2);
  REQUIRE(arch->theta_len() == (3 * 2 + 3) + (2 * 3 + 2));
  const VectorXd theta = random_vector(arch->theta_len(), 82, 0.5);
  VectorXd x(2);
  x << 0.3, -0.7;
  const auto traj = arch->iterates(theta, x, 2);
  REQUIRE(traj.size() == 3);
  // hand-rolled mlp with the documented (W then b, column-major) layout
  const Eigen::Map<const MatrixXd> w0(theta.data(), 3, 2);
  const Eigen::Map<const VectorXd> b0(theta.data() + 6, 3);
  const Eigen::Map<const MatrixXd> w1(theta.data() + 9, 2, 3);
  const Eigen::Map<const VectorXd> b1(theta.data() + 15, 2);
  const VectorXd hidden = (w0 * x + b0).cwiseMax(0.0);
  const VectorXd z0 = w1 * hidden + b1;
  CHECK((traj[0] - z0).norm() == doctest::Approx(0.0).epsilon(1e-14));
  const VectorXd z1 = z0 - 0.1 * (p * z0 + x);
  CHECK((traj[1] - z1).norm() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK((traj[2] - (z1 - 0.1 * (p * z1 + x))).norm() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(arch->prior_mean().norm() == 0.0);
}

TEST_CASE("warm-start network gradients match finite differences") {
  const MatrixXd a = random_batch(3, 3, 83);
  const MatrixXd p = a.transpose() * a + MatrixXd::Identity(3, 3);
  const auto arch = learned::make_l2ws({3, 4, 3}, p, 0.05, 3);
  const VectorXd theta = random_vector(arch->theta_len(), 84, 0.4);
  const MatrixXd x = random_batch(3, 5, 85);
  check_backprop_against_fd(*arch, theta, x, 3, 86);
  check_backprop_against_fd(*arch, theta, x, 0, 87);  // warm start only
}

TEST_CASE("weight sampling has posterior moments and degenerates cleanly") {
  const int p = 6;
  const VectorXd w = random_vector(p, 88);
  VectorXd s(p);
  for (int i = 0; i < p; ++i) s[i] = 0.1 * (i + 1);
  Rng rng(3, stream::weight_sample, 0);
  VectorXd mean = VectorXd::Zero(p), m2 = VectorXd::Zero(p);
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    const VectorXd th = learned::sample_weights(w, s, rng);
    mean += th;
    m2 += (th - w).cwiseAbs2();
  }
  mean /= trials;
  m2 /= trials;
  for (int i = 0; i < p; ++i) {
    CHECK(mean[i] == doctest::Approx(w[i]).epsilon(0.0).scale(1.0).epsilon(0.05));
    CHECK(m2[i] == doctest::Approx(s[i]).epsilon(0.05));
  }
  Rng rng2(3, stream::weight_sample, 1);
  const VectorXd exact = learned::sample_weights(w, VectorXd::Zero(p), rng2);
  CHECK((exact - w).norm() == 0.0);
  CHECK_THROWS_AS((void)learned::sample_weights(w, VectorXd::Zero(p - 1), rng2),
                  std::invalid_argument);
}

TEST_CASE("warm-start distance bound reduces to the norm recursion when deterministic") {
  learned::LayerPosterior layer;
  layer.w_mean = random_batch(3, 2, 89);
  layer.b_mean = random_vector(3, 90);
  layer.w_var = MatrixXd::Zero(3, 2);
  layer.b_var = VectorXd::Zero(3);
  const double wnorm = layer.w_mean.jacobiSvd().singularValues()[0];
  const double expected = 5.0 + (wnorm + layer.b_mean.norm()) * (2.0 + 1.0);
  CHECK(learned::l2ws_distance_bound({layer}, 2.0, 5.0, 0.01) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("warm-start distance bound grows with variance and confidence") {
  learned::LayerPosterior layer;
  layer.w_mean = random_batch(3, 2, 91);
  layer.b_mean = random_vector(3, 92);
  layer.w_var = MatrixXd::Constant(3, 2, 0.01);
  layer.b_var = VectorXd::Constant(3, 0.01);
  const double base = learned::l2ws_distance_bound({layer}, 1.0, 0.0, 0.05);
  learned::LayerPosterior wider = layer;
  wider.w_var *= 4.0;
  wider.b_var *= 4.0;
  CHECK(learned::l2ws_distance_bound({wider}, 1.0, 0.0, 0.05) > base);
  CHECK(learned::l2ws_distance_bound({layer}, 1.0, 0.0, 0.001) > base);
  CHECK(learned::l2ws_distance_bound({layer, layer}, 1.0, 0.0, 0.05) > base);
  CHECK_THROWS_AS((void)learned::l2ws_distance_bound({layer}, 1.0, 0.0, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)learned::l2ws_distance_bound({}, 1.0, 0.0, 0.05),
                  std::invalid_argument);
}

TEST_CASE("layer posterior views tile the flat weight vector") {
  const std::vector<int> dims{3, 4, 2};
  const int len = (4 * 3 + 4) + (2 * 4 + 2);
  const VectorXd w = random_vector(len, 93);
  VectorXd s(len);
  for (int i = 0; i < len; ++i) s[i] = 0.01 * (i + 1);
  const auto layers = learned::l2ws_layer_posteriors(dims, w, s);
  REQUIRE(layers.size() == 2);
  CHECK(layers[0].w_mean(0, 0) == w[0]);
  CHECK(layers[0].w_mean(1, 0) == w[1]);  // column-major within a layer
  CHECK(layers[0].b_mean[0] == w[12]);
  CHECK(layers[1].w_mean(0, 0) == w[16]);
  CHECK(layers[1].b_var[1] == s[len - 1]);
  CHECK_THROWS_AS((void)learned::l2ws_layer_posteriors(dims, w, s.head(len - 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      (void)learned::l2ws_layer_posteriors({3, 4}, w, s),
      std::invalid_argument);
}
