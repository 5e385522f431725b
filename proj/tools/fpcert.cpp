#include <CLI11.hpp>

#include "fpcert/report.hpp"

int main(int argc, char** argv) {
  CLI::App app{"probabilistic performance certificates for fixed-point optimizers"};
  app.require_subcommand(1);

  fpcert::report::CliOptions opts;
  std::uint64_t seed = 0;
  bool has_seed = false;

  const std::vector<std::string> commands{"gen",   "run",       "certify", "train",
                                          "calibrate", "quantiles", "report",  "all"};
  for (const auto& name : commands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config_path, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed")
        ->each([&has_seed](const std::string&) { has_seed = true; });
    sub->add_option("--threads", opts.threads, "worker thread count");
    sub->add_option("--out", opts.out_override, "override the output directory");
    sub->add_flag("--strict-finite", opts.strict_finite,
                  "abort on non-finite rollouts instead of counting them as failures");
  }

  CLI11_PARSE(app, argc, argv);
  if (has_seed) opts.seed = seed;
  return fpcert::report::run_command(app.get_subcommands().front()->get_name(), opts);
}
