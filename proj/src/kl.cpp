#include "fpcert/kl.hpp"

#include <cmath>
#include <stdexcept>

namespace fpcert::kl {

namespace {
constexpr double kPMax = 1.0 - 1e-15;
constexpr int kBisectIters = 200;
}  // namespace

double bernoulli_kl(double q, double p) {
  if (q < 0.0 || q > 1.0) throw std::domain_error("bernoulli_kl: q outside [0,1]");
  if (p < 0.0 || p > 1.0) throw std::domain_error("bernoulli_kl: p outside [0,1]");
  if (p == 0.0) {
    if (q == 0.0) return 0.0;
    throw std::domain_error("bernoulli_kl: infinite divergence (p=0, q>0)");
  }
  if (p == 1.0) {
    if (q == 1.0) return 0.0;
    throw std::domain_error("bernoulli_kl: infinite divergence (p=1, q<1)");
  }
  if (q == 0.0) return -std::log1p(-p);
  if (q == 1.0) return -std::log(p);
  return q * std::log(q / p) + (1.0 - q) * std::log((1.0 - q) / (1.0 - p));
}

double kl_inverse(double q, double c) {
  if (q < 0.0 || q > 1.0) throw std::domain_error("kl_inverse: q outside [0,1]");
  if (c < 0.0) throw std::domain_error("kl_inverse: negative budget");
  if (c == 0.0) return q;
  if (q >= 1.0) return 1.0;
  if (q >= kPMax) return q;
  // kl(q||p) is increasing in p on [q, 1); once the budget covers the value
  // at p = 1 - 1e-15 the supremum is 1.
  if (bernoulli_kl(q, kPMax) <= c) return 1.0;

  double lo = q;       // kl(q||lo) = 0 <= c
  double hi = kPMax;   // kl(q||hi) > c
  for (int i = 0; i < kBisectIters && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // interval at machine resolution
    if (bernoulli_kl(q, mid) <= c) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

double pinsker_upper(double q, double c) {
  if (q < 0.0 || q > 1.0) throw std::domain_error("pinsker_upper: q outside [0,1]");
  if (c < 0.0) throw std::domain_error("pinsker_upper: negative budget");
  return q + std::sqrt(c / 2.0);
}

KlInverseGrad kl_inverse_grad(double q, double c) {
  if (q <= 0.0 || q >= 1.0 || c <= 0.0) {
    throw std::domain_error("kl_inverse_grad: non-differentiable point");
  }
  const double p = kl_inverse(q, c);
  // p lies strictly inside (q, 1) here, so the implicit-function formulas
  // apply: with F(q,p) = kl(q||p) - c,
  //   dp/dc = 1 / F_p = p(1-p)/(p-q)
  //   dp/dq = -F_q / F_p.
  const double dc = p * (1.0 - p) / (p - q);
  const double dq = dc * (std::log(p / q) + std::log((1.0 - q) / (1.0 - p)));
  return {dq, dc};
}

void GroupedGaussianSpec::validate() const {
  const Eigen::Index p = w.size();
  if (s.size() != p || w0.size() != p) {
    throw std::invalid_argument("GroupedGaussianSpec: size mismatch");
  }
  if ((s.array() <= 0.0).any()) {
    throw std::invalid_argument("GroupedGaussianSpec: s must be positive");
  }
  if (lambda.size() != static_cast<Eigen::Index>(groups.size())) {
    throw std::invalid_argument("GroupedGaussianSpec: lambda/groups mismatch");
  }
  if ((lambda.array() <= 0.0).any()) {
    throw std::invalid_argument("GroupedGaussianSpec: lambda must be positive");
  }
  std::vector<char> seen(static_cast<std::size_t>(p), 0);
  for (const auto& g : groups) {
    for (int idx : g) {
      if (idx < 0 || idx >= p || seen[static_cast<std::size_t>(idx)]) {
        throw std::invalid_argument("GroupedGaussianSpec: partition is not a disjoint cover");
      }
      seen[static_cast<std::size_t>(idx)] = 1;
    }
  }
  for (char v : seen) {
    if (!v) throw std::invalid_argument("GroupedGaussianSpec: partition is not a disjoint cover");
  }
}

double gaussian_kl_grouped(const GroupedGaussianSpec& spec) {
  spec.validate();
  const double p = static_cast<double>(spec.w.size());
  double acc = -0.5 * (p + spec.s.array().log().sum());
  for (std::size_t j = 0; j < spec.groups.size(); ++j) {
    const double lam = spec.lambda[static_cast<Eigen::Index>(j)];
    double s1 = 0.0, d2 = 0.0;
    for (int idx : spec.groups[j]) {
      s1 += spec.s[idx];
      const double d = spec.w[idx] - spec.w0[idx];
      d2 += d * d;
    }
    acc += 0.5 * (s1 / lam + d2 / lam +
                  static_cast<double>(spec.groups[j].size()) * std::log(lam));
  }
  return acc;
}

}  // namespace fpcert::kl
