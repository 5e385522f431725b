#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fpcert/bounds.hpp"
#include "fpcert/learned.hpp"

namespace fpcert::report {

// Raised on schema violations; key_path names the offending config field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& key_path, const std::string& message)
      : std::runtime_error(key_path + ": " + message), key_path(key_path) {}
  std::string key_path;
};

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;  // overrides config seed
  int threads = 0;                    // 0 -> config/env/default
  std::string out_override;
  bool strict_finite = false;  // abort on non-finite rollouts instead of counting
};

// Exit codes: 0 ok, 2 config error, 3 numeric abort.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

// Dispatches one subcommand (gen, run, certify, train, calibrate, quantiles,
// report, all) against the config file. Returns the process exit code;
// errors are reported on stderr.
int run_command(const std::string& command, const CliOptions& opts);

// certificates.csv: method,metric,k,epsilon,n_samples,h_samples,empirical,
// r_bar,bound,confidence. 12 significant digits.
void write_certificates(const std::vector<bounds::Certificate>& certs,
                        const std::string& path);
std::vector<bounds::Certificate> read_certificates(const std::string& path);

// quantiles.csv: metric,k,quantile,epsilon_bound,confidence. Uncertified
// cells are omitted (header-only file when nothing qualifies).
void write_quantiles(
    const std::map<std::pair<int, double>, std::optional<double>>& table,
    bounds::MetricId metric, double confidence, const std::string& path);

void write_ledger(const bounds::ConfidenceLedger& ledger, const std::string& path);

// One whitespace-delimited data file per (metric, curve) plus a gnuplot
// script referencing them. Curves: success rate 1 - bound vs k per
// tolerance, and certified quantile vs k per quantile level.
void emit_plotdata(const std::vector<bounds::Certificate>& certs,
                   const std::map<std::pair<int, double>, std::optional<double>>& quantile_table,
                   const std::string& dir);

// Flat JSON record of a trained posterior: architecture id, dims, w, s,
// lambda, group sizes, grid spec.
void save_posterior(const learned::Posterior& post, const std::string& arch_id,
                    const std::vector<int>& dims, const bounds::PriorGridSpec& grid,
                    const std::string& path);
learned::Posterior load_posterior(const std::string& path);

// FNV-1a hash of the canonical (sorted-key) config serialization.
std::uint64_t config_hash_of_file(const std::string& config_path);

}  // namespace fpcert::report
