// Compares the parallel trace kernel against the serial reference on a
// sparse-coding ISTA workload and reports wall-clock times plus the maximum
// elementwise deviation (which must be 0).

#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "fpcert/fixed_point.hpp"
#include "fpcert/problems.hpp"
#include "fpcert/solvers.hpp"

using Clock = std::chrono::steady_clock;

static double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int main(int argc, char** argv) {
  const int n_instances = argc > 1 ? std::atoi(argv[1]) : 500;
  const int k_max = argc > 2 ? std::atoi(argv[2]) : 100;

  const auto fam = fpcert::problems::gen_sparse_coding(32, 64, 0.1, 40.0, 0.1, 7);
  const auto instances = fam.instances(0, n_instances);
  const auto op = fpcert::solvers::ista_operator(fam.dictionary, fam.rho);

  fpcert::fp::RunOptions opt;
  opt.k_max = k_max;
  opt.metric_id = fpcert::bounds::MetricId::fp_residual;

  auto t0 = Clock::now();
  const auto serial = fpcert::fp::run_trace_serial(*op, instances, opt);
  const double t_serial = seconds_since(t0);

  t0 = Clock::now();
  const auto parallel = fpcert::fp::run_trace(*op, instances, opt);
  const double t_parallel = seconds_since(t0);

  double max_dev = 0.0;
  for (std::size_t i = 0; i < serial.values.size(); ++i) {
    const double d = std::abs(serial.values[i] - parallel.values[i]);
    if (d > max_dev) max_dev = d;
  }

  std::printf("instances=%d k_max=%d\n", n_instances, k_max);
  std::printf("serial:   %.3f s\n", t_serial);
  std::printf("parallel: %.3f s  (speedup %.2fx)\n", t_parallel,
              t_serial / t_parallel);
  std::printf("max deviation: %.17g\n", max_dev);
  return max_dev == 0.0 ? 0 : 1;
}
