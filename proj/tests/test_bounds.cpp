#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "fpcert/bounds.hpp"
#include "fpcert/rng.hpp"

using namespace fpcert;

TEST_CASE("published confidence arithmetic reproduces to 10 significant digits") {
  CHECK(bounds::confidence_ledger(1e-5, 1e-5, 6, 1).risk_confidence ==
        doctest::Approx(0.99988).epsilon(1e-10));
  CHECK(bounds::confidence_ledger(1e-4, 0.0, 1, 81).quantile_confidence ==
        doctest::Approx(0.9919).epsilon(1e-10));
  CHECK(bounds::confidence_ledger(1e-5, 1e-5, 6, 81).quantile_confidence ==
        doctest::Approx(0.99028).epsilon(1e-10));
}

TEST_CASE("confidence ledger rejects exhausted budgets") {
  CHECK_THROWS_AS(bounds::confidence_ledger(0.5, 0.5, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(bounds::confidence_ledger(0.01, 0.0, 2, 81), std::invalid_argument);
  bounds::ConfidenceLedger ledger;
  ledger.add("a", 0.4);
  CHECK_THROWS_AS(ledger.add("b", 0.7), std::invalid_argument);
  CHECK_THROWS_AS(ledger.add("c", -0.1), std::invalid_argument);
}

TEST_CASE("ledger totals and confidence") {
  bounds::ConfidenceLedger ledger;
  ledger.add("delta", 1e-5);
  ledger.add("omega", 1e-5);
  ledger.add("grid", 5e-4);
  CHECK(ledger.total_budget() == doctest::Approx(5.2e-4));
  CHECK(ledger.confidence() == doctest::Approx(1.0 - 5.2e-4));
}

TEST_CASE("sample convergence bound at zero empirical risk is analytic") {
  for (long n : {10L, 100L, 1000L}) {
    const double expected = 1.0 - std::exp(-std::log(2.0 / 0.05) / n);
    CHECK(bounds::sample_convergence_bound(0.0, n, 0.05) ==
          doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("sample convergence bound tightens with n at fixed empirical risk") {
  double prev = 1.0;
  for (long n : {10L, 100L, 1000L, 10000L}) {
    const double b = bounds::sample_convergence_bound(0.1, n, 0.01);
    CHECK(b <= prev);
    CHECK(b >= 0.1);
    prev = b;
  }
}

TEST_CASE("maurer bound composes the kl inverse with the pac-bayes budget") {
  const double r = 0.07;
  const long n = 500;
  const double klv = 3.2, delta = 1e-3;
  const double budget = (klv + std::log(2.0 * std::sqrt(500.0) / delta)) / n;
  CHECK(bounds::maurer_bound(r, n, klv, delta) ==
        doctest::Approx(kl::kl_inverse(r, budget)).epsilon(1e-12));
  CHECK_THROWS_AS(bounds::maurer_bound(0.1, 7, 0.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(bounds::maurer_bound(0.1, 100, -1.0, 0.1), std::invalid_argument);
}

namespace {

kl::GroupedGaussianSpec tiny_spec(double lambda) {
  kl::GroupedGaussianSpec spec;
  spec.w = Eigen::VectorXd::Constant(3, 0.4);
  spec.w0 = Eigen::VectorXd::Constant(3, 0.1);
  spec.s = Eigen::VectorXd::Constant(3, 0.01);
  spec.groups = {{0, 1, 2}};
  spec.lambda = Eigen::VectorXd::Constant(1, lambda);
  return spec;
}

}  // namespace

TEST_CASE("regularizer matches the hand-written formula on the grid") {
  bounds::PriorGridSpec grid;  // lambda_max = 100, b = 100
  const double lam = 100.0 * std::exp(-7.0 / 100.0);  // a = 7
  const auto spec = tiny_spec(lam);
  const long n = 64;
  const double delta = 1e-5;
  const double expected =
      (kl::gaussian_kl_grouped(spec) + 2.0 * std::log(7.0) +
       std::log(M_PI * M_PI / 6.0) + std::log(2.0 * std::sqrt(64.0) / delta)) /
      64.0;
  CHECK(bounds::regularizer_B(spec, grid, n, delta) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("regularizer rejects off-grid priors but the relaxation accepts them") {
  bounds::PriorGridSpec grid;
  const auto off = tiny_spec(42.0);  // a = 100 log(100/42), not an integer
  CHECK_THROWS_AS(bounds::regularizer_B(off, grid, 64, 1e-5), std::domain_error);
  CHECK_NOTHROW(bounds::regularizer_B_continuous(off, grid, 64, 1e-5));
  const auto above = tiny_spec(150.0);  // above lambda_max
  CHECK_THROWS_AS(bounds::regularizer_B_continuous(above, grid, 64, 1e-5),
                  std::domain_error);
}

TEST_CASE("round_prior snaps to the grid and is idempotent") {
  bounds::PriorGridSpec grid;
  fpcert::Rng rng(9, stream::test_misc, 20);
  Eigen::VectorXd lam(6);
  for (int i = 0; i < 6; ++i) lam[i] = std::exp(rng.uniform(-3.0, 5.0));
  const Eigen::VectorXd rounded = bounds::round_prior(lam, grid);
  for (int i = 0; i < 6; ++i) {
    const double a = grid.b * std::log(grid.lambda_max / rounded[i]);
    CHECK(a == doctest::Approx(std::round(a)).epsilon(1e-9));
    CHECK(std::round(a) >= 1.0);
  }
  const Eigen::VectorXd twice = bounds::round_prior(rounded, grid);
  for (int i = 0; i < 6; ++i) CHECK(twice[i] == doctest::Approx(rounded[i]).epsilon(1e-13));
  // values above lambda_max clamp to the first grid point
  Eigen::VectorXd big(1);
  big[0] = 1e6;
  CHECK(bounds::round_prior(big, grid)[0] ==
        doctest::Approx(100.0 * std::exp(-1.0 / 100.0)));
}

TEST_CASE("quantile extraction picks the smallest qualifying tolerance") {
  std::map<double, double> grid{{0.1, 0.9}, {1.0, 0.3}, {10.0, 0.05}, {100.0, 0.0}};
  CHECK(*bounds::quantile_from_grid(grid, 0.8) == 10.0);   // need bound <= 0.2
  CHECK(*bounds::quantile_from_grid(grid, 0.5) == 1.0);    // need bound <= 0.5
  CHECK(*bounds::quantile_from_grid(grid, 0.999) == 100.0);
  std::map<double, double> hopeless{{0.1, 0.9}, {1.0, 0.8}};
  CHECK(!bounds::quantile_from_grid(hopeless, 0.5).has_value());
  CHECK_THROWS_AS((void)bounds::quantile_from_grid({}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS((void)bounds::quantile_from_grid(grid, 1.5), std::invalid_argument);
}

TEST_CASE("worst case rates at the published points") {
  CHECK(bounds::worst_case_rate(bounds::RateKind::averaged, 0.5, 0) == doctest::Approx(2.0));
  CHECK(bounds::worst_case_rate(bounds::RateKind::averaged, 0.5, 1) == doctest::Approx(1.0));
  CHECK(bounds::worst_case_rate(bounds::RateKind::linear, 0.7, 0) == doctest::Approx(2.0));
  CHECK(bounds::worst_case_rate(bounds::RateKind::linear, 0.5, 3) ==
        doctest::Approx(2.0 * 0.125));
}

TEST_CASE("averaged rate is continuous across the branch boundary") {
  for (int k = 1; k <= 8; ++k) {
    const double t = static_cast<double>(k) / (k + 1);
    const double alpha_b = 0.5 * (1.0 + std::sqrt(t));
    const double below = bounds::worst_case_rate(bounds::RateKind::averaged,
                                                 alpha_b - 1e-12, k);
    const double above = bounds::worst_case_rate(bounds::RateKind::averaged,
                                                 alpha_b + 1e-12, k);
    CHECK(below == doctest::Approx(above).epsilon(1e-8));
    // both branches equal 2 t^{k/2} at the boundary
    CHECK(below == doctest::Approx(2.0 * std::pow(t, k / 2.0)).epsilon(1e-8));
  }
}

TEST_CASE("rates decrease in k and reject bad parameters") {
  double prev = 10.0;
  for (int k = 0; k <= 50; ++k) {
    const double r = bounds::worst_case_rate(bounds::RateKind::averaged, 0.6, k);
    CHECK(r <= prev + 1e-15);
    prev = r;
  }
  CHECK_THROWS_AS((void)bounds::worst_case_rate(bounds::RateKind::linear, 1.0, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)bounds::worst_case_rate(bounds::RateKind::averaged, 0.4, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)bounds::worst_case_rate(bounds::RateKind::averaged, 0.6, -1),
                  std::invalid_argument);
}

TEST_CASE("combining with the worst case zeroes the certified risk past crossover") {
  // envelope * dist < epsilon -> exact zero; otherwise the probabilistic bound
  CHECK(bounds::combine_with_worst_case(0.3, 0.01, 5.0, 1.0) == 0.0);
  CHECK(bounds::combine_with_worst_case(0.3, 0.5, 5.0, 1.0) == 0.3);
}

TEST_CASE("string round trips for enums") {
  CHECK(bounds::to_string(bounds::MetricId::nmse) == "nmse");
  CHECK(*bounds::metric_from_string("fp_residual") == bounds::MetricId::fp_residual);
  CHECK(!bounds::metric_from_string("bogus").has_value());
  CHECK(bounds::to_string(bounds::Method::pac_bayes) == "pac_bayes");
}
