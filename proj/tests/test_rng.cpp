#include <doctest.h>

#include <cmath>
#include <set>

#include "fpcert/rng.hpp"

using fpcert::Rng;

TEST_CASE("identical seed and stream reproduce the sequence") {
  Rng a(42, 1, 2, 3), b(42, 1, 2, 3);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct streams decorrelate") {
  Rng a(42, 1), b(42, 2), c(43, 1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 50; ++i) {
    seen.insert(a.next_u64());
    seen.insert(b.next_u64());
    seen.insert(c.next_u64());
  }
  CHECK(seen.size() == 150);  // no collisions across streams
}

TEST_CASE("doubles live in [0,1) with roughly uniform mass") {
  Rng rng(7, fpcert::stream::test_misc);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.next_double();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("uniform(lo,hi) stays inside the interval") {
  Rng rng(7, fpcert::stream::test_misc, 1);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-3.0, 5.0);
    REQUIRE(u >= -3.0);
    REQUIRE(u < 5.0);
  }
}

TEST_CASE("normal draws have standard moments") {
  Rng rng(11, fpcert::stream::test_misc, 2);
  const int n = 50000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.next_normal();
    sum += g;
    sum2 += g * g;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}
