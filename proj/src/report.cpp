#include "fpcert/report.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "fpcert/calibration.hpp"
#include "fpcert/fixed_point.hpp"
#include "fpcert/problems.hpp"
#include "fpcert/solvers.hpp"
#include "fpcert/training.hpp"

namespace fpcert::report {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// ---------------------------------------------------------------- schema ---

const json* find_field(const json& obj, const std::string& key) {
  if (!obj.is_object()) return nullptr;
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

const json& require(const json& obj, const std::string& path, const std::string& key) {
  const json* f = find_field(obj, key);
  if (!f) throw ConfigError(path + "." + key, "missing required field");
  return *f;
}

double require_number(const json& obj, const std::string& path, const std::string& key) {
  const json& f = require(obj, path, key);
  if (!f.is_number()) throw ConfigError(path + "." + key, "expected a number");
  return f.get<double>();
}

double number_or(const json& obj, const std::string& path, const std::string& key,
                 double fallback) {
  const json* f = find_field(obj, key);
  if (!f) return fallback;
  if (!f->is_number()) throw ConfigError(path + "." + key, "expected a number");
  return f->get<double>();
}

long require_count(const json& obj, const std::string& path, const std::string& key) {
  const double v = require_number(obj, path, key);
  if (v < 0 || v != std::floor(v)) {
    throw ConfigError(path + "." + key, "expected a nonnegative integer");
  }
  return static_cast<long>(v);
}

long count_or(const json& obj, const std::string& path, const std::string& key,
              long fallback) {
  if (!find_field(obj, key)) return fallback;
  return require_count(obj, path, key);
}

std::string require_string(const json& obj, const std::string& path,
                           const std::string& key) {
  const json& f = require(obj, path, key);
  if (!f.is_string()) throw ConfigError(path + "." + key, "expected a string");
  return f.get<std::string>();
}

std::string string_or(const json& obj, const std::string& path, const std::string& key,
                      const std::string& fallback) {
  const json* f = find_field(obj, key);
  if (!f) return fallback;
  if (!f->is_string()) throw ConfigError(path + "." + key, "expected a string");
  return f->get<std::string>();
}

struct ToleranceGridSpec {
  double min = 1e-6, max = 1e2;
  int count = 81;
  bool log_scale = true;
};

struct BoundSpec {
  double delta = 1e-5, omega = 1e-5;
  ToleranceGridSpec tol;
  std::vector<double> quantiles;
  int k_max = 10;
  bounds::MetricId metric = bounds::MetricId::fp_residual;
};

struct FamilySpec {
  std::string id;
  int m = 32, n = 64;
  double keep_prob = 0.1, snr_db = 40.0, rho = 0.1;
  int qp_n = 20;
  int side = 12, blur_size = 8;
  double noise_std = 0.001;
  std::string image_source = "synthetic", idx_path;
};

struct OptimizerSpec {
  std::string type;  // classical | learned
  std::string id;    // ista | fista | gd | dr_boxqp | alista | tilista | lista | l2ws
  double gamma = 0.0;
  std::string warm_start = "none";
  int bank_size = 10;
  // learned
  int k_layers = 10;
  std::vector<int> layer_dims;
  training::TrainConfig train;
  std::vector<double> btarget_grid;
  int h_samples = 2000;
  int crossval_k = 10;
  double crossval_q = 0.8;
  std::string loss = "regression";
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  long n_train = 100, n_test = 0;
  FamilySpec family;
  OptimizerSpec optimizer;
  BoundSpec bound;
};

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(require_count(j, "", "seed"));
  cfg.out = string_or(j, "", "out", "out");
  cfg.n_train = require_count(j, "", "n_train");
  if (cfg.n_train < 1) throw ConfigError(".n_train", "must be >= 1");
  cfg.n_test = count_or(j, "", "n_test", 0);

  const json& fam = require(j, "", "family");
  cfg.family.id = require_string(fam, ".family", "id");
  if (cfg.family.id == "sparse_coding") {
    cfg.family.m = static_cast<int>(count_or(fam, ".family", "m", 32));
    cfg.family.n = static_cast<int>(count_or(fam, ".family", "n", 64));
    cfg.family.keep_prob = number_or(fam, ".family", "keep_prob", 0.1);
    cfg.family.snr_db = number_or(fam, ".family", "snr_db", 40.0);
    cfg.family.rho = number_or(fam, ".family", "rho", 0.1);
  } else if (cfg.family.id == "unconstrained_qp") {
    cfg.family.qp_n = static_cast<int>(count_or(fam, ".family", "n", 20));
  } else if (cfg.family.id == "deblurring") {
    cfg.family.side = static_cast<int>(count_or(fam, ".family", "side", 12));
    cfg.family.blur_size = static_cast<int>(count_or(fam, ".family", "blur_size", 8));
    cfg.family.noise_std = number_or(fam, ".family", "noise_std", 0.001);
    cfg.family.rho = number_or(fam, ".family", "rho", 1e-4);
    cfg.family.image_source = string_or(fam, ".family", "image_source", "synthetic");
    cfg.family.idx_path = string_or(fam, ".family", "idx_path", "");
    if (cfg.family.image_source != "synthetic" && cfg.family.image_source != "idx_file") {
      throw ConfigError(".family.image_source", "expected synthetic or idx_file");
    }
  } else {
    throw ConfigError(".family.id", "unknown family " + cfg.family.id);
  }

  const json& opt = require(j, "", "optimizer");
  cfg.optimizer.type = require_string(opt, ".optimizer", "type");
  cfg.optimizer.id = require_string(opt, ".optimizer", "id");
  if (cfg.optimizer.type == "classical") {
    static const std::vector<std::string> ids{"ista", "fista", "gd", "dr_boxqp"};
    if (std::find(ids.begin(), ids.end(), cfg.optimizer.id) == ids.end()) {
      throw ConfigError(".optimizer.id", "unknown classical optimizer");
    }
    cfg.optimizer.gamma = number_or(opt, ".optimizer", "gamma", 0.0);
    cfg.optimizer.warm_start = string_or(opt, ".optimizer", "warm_start", "none");
    cfg.optimizer.bank_size =
        static_cast<int>(count_or(opt, ".optimizer", "bank_size", 10));
    if (cfg.optimizer.warm_start != "none" && cfg.optimizer.warm_start != "nearest") {
      throw ConfigError(".optimizer.warm_start", "expected none or nearest");
    }
  } else if (cfg.optimizer.type == "learned") {
    static const std::vector<std::string> ids{"alista", "tilista", "lista", "l2ws"};
    if (std::find(ids.begin(), ids.end(), cfg.optimizer.id) == ids.end()) {
      throw ConfigError(".optimizer.id", "unknown learned architecture");
    }
    cfg.optimizer.k_layers = static_cast<int>(count_or(opt, ".optimizer", "k_layers", 10));
    cfg.optimizer.gamma = number_or(opt, ".optimizer", "gamma", 0.0);
    if (const json* dims = find_field(opt, "layer_dims")) {
      if (!dims->is_array()) throw ConfigError(".optimizer.layer_dims", "expected an array");
      for (const auto& d : *dims) cfg.optimizer.layer_dims.push_back(d.get<int>());
    }
    cfg.optimizer.h_samples =
        static_cast<int>(count_or(opt, ".optimizer", "h_samples", 2000));
    cfg.optimizer.crossval_k =
        static_cast<int>(count_or(opt, ".optimizer", "crossval_k", 10));
    cfg.optimizer.crossval_q = number_or(opt, ".optimizer", "crossval_q", 0.8);
    const json& tr = require(opt, ".optimizer", "train");
    cfg.optimizer.train.b_target = number_or(tr, ".optimizer.train", "b_target", 0.05);
    cfg.optimizer.train.mu = number_or(tr, ".optimizer.train", "mu", 1e3);
    cfg.optimizer.train.learning_rate =
        number_or(tr, ".optimizer.train", "learning_rate", 1e-3);
    cfg.optimizer.train.epochs =
        static_cast<int>(count_or(tr, ".optimizer.train", "epochs", 200));
    cfg.optimizer.train.k_train =
        static_cast<int>(count_or(tr, ".optimizer.train", "k_train", 10));
    cfg.optimizer.train.grid.lambda_max =
        number_or(tr, ".optimizer.train", "lambda_max", 100.0);
    cfg.optimizer.train.grid.b = number_or(tr, ".optimizer.train", "b", 100.0);
    cfg.optimizer.loss = string_or(tr, ".optimizer.train", "loss", "regression");
    if (cfg.optimizer.loss != "regression" && cfg.optimizer.loss != "objective") {
      throw ConfigError(".optimizer.train.loss", "expected regression or objective");
    }
    if (const json* grid = find_field(tr, "b_target_grid")) {
      if (!grid->is_array()) {
        throw ConfigError(".optimizer.train.b_target_grid", "expected an array");
      }
      for (const auto& v : *grid) cfg.optimizer.btarget_grid.push_back(v.get<double>());
    }
  } else {
    throw ConfigError(".optimizer.type", "expected classical or learned");
  }

  const json& bnd = require(j, "", "bound");
  cfg.bound.delta = require_number(bnd, ".bound", "delta");
  cfg.bound.omega = number_or(bnd, ".bound", "omega", 1e-5);
  if (cfg.bound.delta <= 0.0 || cfg.bound.delta >= 1.0) {
    throw ConfigError(".bound.delta", "must be in (0,1)");
  }
  cfg.bound.k_max = static_cast<int>(count_or(bnd, ".bound", "k_max", 10));
  if (cfg.bound.k_max < 1) throw ConfigError(".bound.k_max", "must be >= 1");
  const std::string metric = string_or(bnd, ".bound", "metric", "fp_residual");
  const auto mid = bounds::metric_from_string(metric);
  if (!mid) throw ConfigError(".bound.metric", "unknown metric " + metric);
  cfg.bound.metric = *mid;
  if (const json* tg = find_field(bnd, "tolerance_grid")) {
    cfg.bound.tol.min = require_number(*tg, ".bound.tolerance_grid", "min");
    cfg.bound.tol.max = require_number(*tg, ".bound.tolerance_grid", "max");
    cfg.bound.tol.count =
        static_cast<int>(require_count(*tg, ".bound.tolerance_grid", "count"));
    const std::string scale = string_or(*tg, ".bound.tolerance_grid", "scale", "log");
    if (scale != "log" && scale != "linear") {
      throw ConfigError(".bound.tolerance_grid.scale", "expected log or linear");
    }
    cfg.bound.tol.log_scale = scale == "log";
    if (cfg.bound.tol.count < 1) {
      throw ConfigError(".bound.tolerance_grid.count", "must be >= 1");
    }
    if (cfg.bound.tol.log_scale && cfg.bound.tol.min <= 0.0) {
      throw ConfigError(".bound.tolerance_grid.min", "log scale needs min > 0");
    }
    if (cfg.bound.tol.max < cfg.bound.tol.min) {
      throw ConfigError(".bound.tolerance_grid.max", "must be >= min");
    }
  } else if (cfg.bound.metric == bounds::MetricId::nmse) {
    cfg.bound.tol = {-80.0, 0.0, 81, false};
  }
  if (const json* qs = find_field(bnd, "quantiles")) {
    if (!qs->is_array()) throw ConfigError(".bound.quantiles", "expected an array");
    for (const auto& q : *qs) {
      const double v = q.get<double>();
      if (v <= 0.0 || v >= 1.0) throw ConfigError(".bound.quantiles", "values in (0,1)");
      cfg.bound.quantiles.push_back(v);
    }
  }

  // Ledger feasibility: the quantile union budget must stay below 1.
  const int n_bt = cfg.optimizer.btarget_grid.empty()
                       ? 1
                       : static_cast<int>(cfg.optimizer.btarget_grid.size());
  const double omega = cfg.optimizer.type == "learned" ? cfg.bound.omega : 0.0;
  if (cfg.bound.tol.count * n_bt * (cfg.bound.delta + omega) >= 1.0) {
    throw ConfigError(".bound.delta", "union failure budget reaches 1");
  }
  return cfg;
}

std::vector<double> make_tolerance_grid(const ToleranceGridSpec& t) {
  std::vector<double> grid(t.count);
  if (t.count == 1) {
    grid[0] = t.min;
    return grid;
  }
  for (int i = 0; i < t.count; ++i) {
    const double f = static_cast<double>(i) / (t.count - 1);
    grid[i] = t.log_scale
                  ? std::exp(std::log(t.min) + f * (std::log(t.max) - std::log(t.min)))
                  : t.min + f * (t.max - t.min);
  }
  return grid;
}

// -------------------------------------------------------------- pipeline ---

problems::ParametricFamily build_family(const RunConfig& cfg) {
  const auto& f = cfg.family;
  if (f.id == "sparse_coding") {
    return problems::gen_sparse_coding(f.m, f.n, f.keep_prob, f.snr_db, f.rho, cfg.seed);
  }
  if (f.id == "unconstrained_qp") {
    return problems::gen_unconstrained_qp(f.qp_n, cfg.seed);
  }
  return problems::gen_deblurring(
      f.side, f.blur_size, f.noise_std, f.rho,
      f.image_source == "synthetic" ? problems::ImageSource::synthetic
                                    : problems::ImageSource::idx_file,
      f.idx_path, cfg.seed);
}

struct ClassicalSetup {
  std::unique_ptr<fp::FixedPointOperator> op;  // null for fista
  bool fista = false;
  MatrixXd d;  // fista data
  double rho = 0.0, L = 0.0;
};

ClassicalSetup build_classical(const RunConfig& cfg,
                               const problems::ParametricFamily& fam) {
  ClassicalSetup s;
  const std::string& id = cfg.optimizer.id;
  if (id == "ista" || id == "fista") {
    if (fam.family_id != problems::FamilyId::sparse_coding) {
      throw ConfigError(".optimizer.id", id + " requires the sparse_coding family");
    }
    if (id == "ista") {
      s.op = solvers::ista_operator(fam.dictionary, fam.rho);
    } else {
      s.fista = true;
      s.d = fam.dictionary;
      s.rho = fam.rho;
      s.L = solvers::lmax_gram(fam.dictionary);
    }
  } else if (id == "gd") {
    if (fam.family_id != problems::FamilyId::unconstrained_qp) {
      throw ConfigError(".optimizer.id", "gd requires the unconstrained_qp family");
    }
    const MatrixXd p = fam.qp_diag.asDiagonal();
    double gamma = cfg.optimizer.gamma;
    if (gamma <= 0.0) {
      gamma = 2.0 / (fam.qp_diag.minCoeff() + fam.qp_diag.maxCoeff());
    }
    s.op = solvers::gd_operator(p, gamma);
  } else {  // dr_boxqp
    if (fam.family_id != problems::FamilyId::deblurring) {
      throw ConfigError(".optimizer.id", "dr_boxqp requires the deblurring family");
    }
    const int n = static_cast<int>(fam.blur.cols());
    const MatrixXd p = 2.0 * fam.blur.transpose() * fam.blur;
    solvers::AffineParam map;
    map.qx = -2.0 * fam.blur.transpose();
    map.q0 = VectorXd::Constant(n, fam.rho);
    s.op = solvers::dr_boxqp_operator(p, VectorXd::Zero(n), VectorXd::Ones(n),
                                      std::move(map));
  }
  return s;
}

// Fills missing ground truths (deblurring) when the metric needs them.
void ensure_truths(std::vector<fp::Instance>& instances, const ClassicalSetup& setup,
                   bounds::MetricId metric) {
  if (metric == bounds::MetricId::fp_residual) return;
  for (auto& inst : instances) {
    if (!inst.z_true) {
      if (!setup.op) throw std::runtime_error("no solver available for ground truths");
      inst.z_true = solvers::solve_boxqp_reference(*setup.op, inst.x);
    }
  }
}

fp::TraceTensor fista_trace(const ClassicalSetup& s,
                            const std::vector<fp::Instance>& instances,
                            const fp::RunOptions& opt) {
  fp::TraceTensor t;
  t.metric_id = opt.metric_id;
  t.resize(static_cast<int>(instances.size()), 1, opt.k_max);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto z = solvers::fista_run(s.d, instances[i].x, s.rho, s.L, opt.k_max + 1);
    for (int k = 0; k <= opt.k_max; ++k) {
      double v;
      if (opt.metric_id == bounds::MetricId::fp_residual) {
        v = (z[k + 1] - z[k]).norm();
      } else {
        const double num = (z[k] - *instances[i].z_true).squaredNorm();
        if (opt.metric_id == bounds::MetricId::mse) {
          v = num;
        } else {
          const double den = instances[i].z_true->squaredNorm();
          v = num == 0.0 ? -320.0 : std::max(-320.0, 10.0 * std::log10(num / den));
        }
      }
      if (!std::isfinite(v)) {
        if (!opt.count_nonfinite_as_failure) {
          throw std::runtime_error("fista: non-finite iterate at instance " +
                                   std::to_string(i));
        }
        v = std::numeric_limits<double>::infinity();
      }
      t.at(static_cast<int>(i), 0, k) = v;
    }
  }
  return t;
}

std::unique_ptr<learned::Architecture> build_arch(const RunConfig& cfg,
                                                  const problems::ParametricFamily& fam) {
  const auto& o = cfg.optimizer;
  if (o.id == "l2ws") {
    if (fam.family_id != problems::FamilyId::unconstrained_qp) {
      throw ConfigError(".optimizer.id", "l2ws requires the unconstrained_qp family");
    }
    const MatrixXd p = fam.qp_diag.asDiagonal();
    double gamma = o.gamma;
    if (gamma <= 0.0) gamma = 2.0 / (fam.qp_diag.minCoeff() + fam.qp_diag.maxCoeff());
    std::vector<int> dims = o.layer_dims;
    if (dims.empty()) {
      const int n = static_cast<int>(fam.qp_diag.size());
      dims = {n, n, n};
    }
    return learned::make_l2ws(dims, p, gamma, o.k_layers);
  }
  if (fam.family_id != problems::FamilyId::sparse_coding) {
    throw ConfigError(".optimizer.id", o.id + " requires the sparse_coding family");
  }
  const double L = solvers::lmax_gram(fam.dictionary);
  if (o.id == "alista") {
    return learned::make_alista(fam.dictionary, learned::datafree_W(fam.dictionary),
                                o.k_layers, fam.rho, L);
  }
  if (o.id == "tilista") {
    return learned::make_tilista(fam.dictionary, o.k_layers, fam.rho, L);
  }
  return learned::make_lista(fam.dictionary, o.k_layers, L);
}

training::Batch to_batch(const std::vector<fp::Instance>& instances, bool need_truth) {
  training::Batch b;
  const int n = static_cast<int>(instances.size());
  b.x.resize(instances[0].x.size(), n);
  for (int i = 0; i < n; ++i) b.x.col(i) = instances[i].x;
  if (need_truth) {
    if (!instances[0].z_true) {
      throw std::runtime_error("training batch: missing ground truths");
    }
    b.z_true.resize(instances[0].z_true->size(), n);
    for (int i = 0; i < n; ++i) b.z_true.col(i) = *instances[i].z_true;
  }
  return b;
}

// --------------------------------------------------------------- writers ---

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(12) << v;
  return ss.str();
}

void write_manifest(const fs::path& dir, std::uint64_t hash, std::uint64_t seed,
                    const std::string& command, bool complete,
                    const std::vector<std::string>& artifacts) {
  json m;
  std::ostringstream hs;
  hs << std::hex << std::setfill('0') << std::setw(16) << hash;
  m["config_hash"] = hs.str();
  m["seed"] = seed;
  m["command"] = command;
  m["status"] = complete ? "complete" : "partial";
  m["artifacts"] = artifacts;
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << '\n';
}

std::map<std::pair<int, double>, std::optional<double>> read_quantiles(
    const std::string& path) {
  std::map<std::pair<int, double>, std::optional<double>> table;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string metric, kf, qf, ef, cf;
    std::getline(ss, metric, ',');
    std::getline(ss, kf, ',');
    std::getline(ss, qf, ',');
    std::getline(ss, ef, ',');
    std::getline(ss, cf, ',');
    table[{std::stoi(kf), std::stod(qf)}] = std::stod(ef);
  }
  return table;
}

// ------------------------------------------------------------- commands ----

struct CommandContext {
  RunConfig cfg;
  std::uint64_t hash = 0;
  fs::path out;
  int threads = 0;
  bool strict_finite = false;
};

void cmd_gen(const CommandContext& ctx) {
  const auto fam = build_family(ctx.cfg);
  const auto instances =
      fam.instances(0, static_cast<std::uint64_t>(ctx.cfg.n_train + ctx.cfg.n_test));
  std::ofstream out(ctx.out / "instances.csv");
  out << "instance,kind,coord,value\n";
  out.precision(17);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    for (Eigen::Index c = 0; c < instances[i].x.size(); ++c) {
      out << i << ",x," << c << ',' << instances[i].x[c] << '\n';
    }
    if (instances[i].z_true) {
      for (Eigen::Index c = 0; c < instances[i].z_true->size(); ++c) {
        out << i << ",z," << c << ',' << (*instances[i].z_true)[c] << '\n';
      }
    }
  }
  write_manifest(ctx.out, ctx.hash, ctx.cfg.seed, "gen", true, {"instances.csv"});
}

fp::RunOptions run_options(const CommandContext& ctx) {
  fp::RunOptions opt;
  opt.k_max = ctx.cfg.bound.k_max;
  opt.metric_id = ctx.cfg.bound.metric;
  opt.count_nonfinite_as_failure = !ctx.strict_finite;
  opt.threads = ctx.threads;
  return opt;
}

fp::TraceTensor classical_trace(const CommandContext& ctx) {
  const auto fam = build_family(ctx.cfg);
  auto setup = build_classical(ctx.cfg, fam);
  auto instances = fam.instances(0, static_cast<std::uint64_t>(ctx.cfg.n_train));
  ensure_truths(instances, setup, ctx.cfg.bound.metric);
  fp::RunOptions opt = run_options(ctx);
  if (ctx.cfg.optimizer.warm_start == "nearest") {
    solvers::WarmStartBank bank;
    auto base = fam.instances(
        static_cast<std::uint64_t>(ctx.cfg.n_train + ctx.cfg.n_test),
        static_cast<std::uint64_t>(ctx.cfg.optimizer.bank_size));
    ensure_truths(base, setup, bounds::MetricId::mse);  // force solutions
    for (auto& inst : base) {
      bank.base_x.push_back(inst.x);
      bank.base_z.push_back(*inst.z_true);
    }
    opt.warm_start = bank.as_warm_start();
  }
  if (setup.fista) return fista_trace(setup, instances, opt);
  return fp::run_trace(*setup.op, instances, opt);
}

void cmd_run(const CommandContext& ctx) {
  if (ctx.cfg.optimizer.type != "classical") {
    throw ConfigError(".optimizer.type", "run applies to classical optimizers; use train");
  }
  const auto trace = classical_trace(ctx);
  trace.write_binary((ctx.out / "trace.bin").string());
  write_manifest(ctx.out, ctx.hash, ctx.cfg.seed, "run", true, {"trace.bin"});
}

void cmd_certify(const CommandContext& ctx) {
  if (ctx.cfg.optimizer.type != "classical") {
    throw ConfigError(".optimizer.type",
                      "certify applies to classical optimizers; use calibrate");
  }
  fp::TraceTensor trace;
  const fs::path trace_path = ctx.out / "trace.bin";
  if (fs::exists(trace_path)) {
    trace = fp::TraceTensor::read_binary(trace_path.string());
  } else {
    trace = classical_trace(ctx);
  }
  const auto grid = make_tolerance_grid(ctx.cfg.bound.tol);
  const auto bundle =
      fp::certify_classical(trace, grid, ctx.cfg.bound.delta, ctx.cfg.bound.quantiles);
  write_certificates(bundle.certificates, (ctx.out / "certificates.csv").string());
  write_quantiles(bundle.quantile_table, trace.metric_id, bundle.quantile_confidence,
                  (ctx.out / "quantiles.csv").string());
  write_ledger(bundle.ledger, (ctx.out / "ledger.txt").string());
  write_manifest(ctx.out, ctx.hash, ctx.cfg.seed, "certify", true,
                 {"certificates.csv", "quantiles.csv", "ledger.txt"});
}

calibration::CalibrationConfig cal_config(const CommandContext& ctx) {
  calibration::CalibrationConfig cal;
  cal.h_samples = ctx.cfg.optimizer.h_samples;
  cal.delta = ctx.cfg.bound.delta;
  cal.omega = ctx.cfg.bound.omega;
  cal.tolerance_grid = make_tolerance_grid(ctx.cfg.bound.tol);
  cal.k_max = ctx.cfg.bound.k_max;
  cal.metric_id = ctx.cfg.bound.metric;
  cal.seed = ctx.cfg.seed;
  cal.n_btargets = ctx.cfg.optimizer.btarget_grid.empty()
                       ? 1
                       : static_cast<int>(ctx.cfg.optimizer.btarget_grid.size());
  cal.threads = ctx.threads;
  cal.count_nonfinite_as_failure = !ctx.strict_finite;
  return cal;
}

void cmd_train(const CommandContext& ctx) {
  if (ctx.cfg.optimizer.type != "learned") {
    throw ConfigError(".optimizer.type", "train applies to learned optimizers");
  }
  const auto fam = build_family(ctx.cfg);
  const auto arch = build_arch(ctx.cfg, fam);
  auto instances = fam.instances(0, static_cast<std::uint64_t>(ctx.cfg.n_train));
  training::LossSpec loss;
  if (ctx.cfg.optimizer.loss == "objective") {
    loss.id = training::LossId::objective;
    loss.d = fam.dictionary;
    loss.rho = fam.rho;
  }
  const auto batch = to_batch(instances, loss.id == training::LossId::regression);
  training::TrainConfig tc = ctx.cfg.optimizer.train;
  tc.delta = ctx.cfg.bound.delta;
  tc.seed = ctx.cfg.seed;

  training::TrainResult result;
  if (ctx.cfg.optimizer.btarget_grid.size() > 1) {
    auto cv = calibration::crossval_btarget(
        *arch, batch, instances, loss, tc, ctx.cfg.optimizer.btarget_grid,
        cal_config(ctx), {ctx.cfg.optimizer.crossval_q}, ctx.cfg.optimizer.crossval_k,
        ctx.cfg.optimizer.crossval_q);
    result = std::move(cv.best);
  } else {
    if (ctx.cfg.optimizer.btarget_grid.size() == 1) {
      tc.b_target = ctx.cfg.optimizer.btarget_grid[0];
    }
    result = training::train_pacbayes(*arch, batch, loss, tc);
  }
  std::vector<int> dims = ctx.cfg.optimizer.layer_dims;
  if (dims.empty()) dims = {ctx.cfg.optimizer.k_layers};
  save_posterior(result.posterior, ctx.cfg.optimizer.id, dims, tc.grid,
                 (ctx.out / "weights.json").string());
  training::write_training_log(result.log, (ctx.out / "training_log.csv").string());
  write_manifest(ctx.out, ctx.hash, ctx.cfg.seed, "train", true,
                 {"weights.json", "training_log.csv"});
}

void cmd_calibrate(const CommandContext& ctx) {
  if (ctx.cfg.optimizer.type != "learned") {
    throw ConfigError(".optimizer.type", "calibrate applies to learned optimizers");
  }
  const auto fam = build_family(ctx.cfg);
  const auto arch = build_arch(ctx.cfg, fam);
  const auto instances = fam.instances(0, static_cast<std::uint64_t>(ctx.cfg.n_train));
  const auto post = load_posterior((ctx.out / "weights.json").string());
  const auto cal = cal_config(ctx);
  const auto bundle = calibration::certify_learned(post, *arch, instances, cal,
                                                   ctx.cfg.bound.quantiles,
                                                   ctx.cfg.optimizer.train.grid);
  write_certificates(bundle.certificates, (ctx.out / "certificates.csv").string());
  write_quantiles(bundle.quantile_table, cal.metric_id, bundle.quantile_confidence,
                  (ctx.out / "quantiles.csv").string());
  write_ledger(bundle.ledger, (ctx.out / "ledger.txt").string());
  write_manifest(ctx.out, ctx.hash, ctx.cfg.seed, "calibrate", true,
                 {"certificates.csv", "quantiles.csv", "ledger.txt"});
}

void cmd_quantiles(const CommandContext& ctx) {
  const auto certs = read_certificates((ctx.out / "certificates.csv").string());
  if (certs.empty()) throw std::runtime_error("certificates.csv is empty");
  const int n_bt = ctx.cfg.optimizer.btarget_grid.empty()
                       ? 1
                       : static_cast<int>(ctx.cfg.optimizer.btarget_grid.size());
  const double omega =
      ctx.cfg.optimizer.type == "learned" ? ctx.cfg.bound.omega : 0.0;
  std::map<int, std::map<double, double>> by_k;
  for (const auto& c : certs) by_k[c.k][c.epsilon] = c.risk_bound;
  const auto conf = bounds::confidence_ledger(
      ctx.cfg.bound.delta, omega, n_bt,
      static_cast<int>(by_k.begin()->second.size()));
  std::map<std::pair<int, double>, std::optional<double>> table;
  for (const auto& [k, grid] : by_k) {
    for (double q : ctx.cfg.bound.quantiles) {
      table[{k, q}] = bounds::quantile_from_grid(grid, q);
    }
  }
  write_quantiles(table, certs.front().metric_id, conf.quantile_confidence,
                  (ctx.out / "quantiles.csv").string());
  write_manifest(ctx.out, ctx.hash, ctx.cfg.seed, "quantiles", true, {"quantiles.csv"});
}

void cmd_report(const CommandContext& ctx) {
  const auto certs = read_certificates((ctx.out / "certificates.csv").string());
  std::map<std::pair<int, double>, std::optional<double>> table;
  const fs::path qpath = ctx.out / "quantiles.csv";
  if (fs::exists(qpath)) table = read_quantiles(qpath.string());
  emit_plotdata(certs, table, ctx.out.string());
  write_manifest(ctx.out, ctx.hash, ctx.cfg.seed, "report", true,
                 {"plot_success_rate.dat", "plot_quantiles.dat", "plots.gp"});
}

void cmd_all(const CommandContext& ctx) {
  cmd_gen(ctx);
  if (ctx.cfg.optimizer.type == "classical") {
    cmd_run(ctx);
    cmd_certify(ctx);
  } else {
    cmd_train(ctx);
    cmd_calibrate(ctx);
  }
  cmd_report(ctx);
  std::vector<std::string> artifacts{"instances.csv", "certificates.csv",
                                     "quantiles.csv", "ledger.txt", "plots.gp"};
  write_manifest(ctx.out, ctx.hash, ctx.cfg.seed, "all", true, artifacts);
}

}  // namespace

// ------------------------------------------------------------ public API ---

void write_certificates(const std::vector<bounds::Certificate>& certs,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "method,metric,k,epsilon,n_samples,h_samples,empirical,r_bar,bound,confidence\n";
  for (const auto& c : certs) {
    out << bounds::to_string(c.method) << ',' << bounds::to_string(c.metric_id) << ','
        << c.k << ',' << fmt(c.epsilon) << ',' << c.n_samples << ',' << c.h_samples
        << ',' << fmt(c.empirical_risk) << ',' << fmt(c.r_bar) << ','
        << fmt(c.risk_bound) << ',' << fmt(c.confidence) << '\n';
  }
}

std::vector<bounds::Certificate> read_certificates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<bounds::Certificate> certs;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f[10];
    for (int i = 0; i < 10; ++i) std::getline(ss, f[i], ',');
    bounds::Certificate c;
    if (f[0] == "sample_convergence") c.method = bounds::Method::sample_convergence;
    else if (f[0] == "pac_bayes") c.method = bounds::Method::pac_bayes;
    else if (f[0] == "worst_case") c.method = bounds::Method::worst_case;
    else c.method = bounds::Method::combined;
    const auto mid = bounds::metric_from_string(f[1]);
    if (!mid) throw std::runtime_error("bad metric in " + path);
    c.metric_id = *mid;
    c.k = std::stoi(f[2]);
    c.epsilon = std::stod(f[3]);
    c.n_samples = std::stol(f[4]);
    c.h_samples = std::stol(f[5]);
    c.empirical_risk = std::stod(f[6]);
    c.r_bar = std::stod(f[7]);
    c.risk_bound = std::stod(f[8]);
    c.confidence = std::stod(f[9]);
    certs.push_back(c);
  }
  return certs;
}

void write_quantiles(
    const std::map<std::pair<int, double>, std::optional<double>>& table,
    bounds::MetricId metric, double confidence, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "metric,k,quantile,epsilon_bound,confidence\n";
  for (const auto& [key, eps] : table) {
    if (!eps) continue;
    out << bounds::to_string(metric) << ',' << key.first << ',' << fmt(key.second)
        << ',' << fmt(*eps) << ',' << fmt(confidence) << '\n';
  }
}

void write_ledger(const bounds::ConfidenceLedger& ledger, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "failure budget decomposition\n";
  for (const auto& e : ledger.entries) {
    out << "  " << e.label << ": " << fmt(e.failure_budget) << '\n';
  }
  out << "total: " << fmt(ledger.total_budget()) << '\n';
  out << "confidence: " << fmt(ledger.confidence()) << '\n';
}

void emit_plotdata(
    const std::vector<bounds::Certificate>& certs,
    const std::map<std::pair<int, double>, std::optional<double>>& quantile_table,
    const std::string& dir) {
  if (certs.empty()) throw std::invalid_argument("emit_plotdata: empty bundle");
  const fs::path d(dir);
  {
    // success rate = 1 - risk bound, one block per tolerance
    std::ofstream out(d / "plot_success_rate.dat");
    out << "# k  success_rate  (blocks per tolerance)\n";
    std::map<double, std::map<int, double>> by_eps;
    for (const auto& c : certs) by_eps[c.epsilon][c.k] = 1.0 - c.risk_bound;
    for (const auto& [eps, curve] : by_eps) {
      out << "# epsilon = " << fmt(eps) << '\n';
      for (const auto& [k, v] : curve) out << k << ' ' << fmt(v) << '\n';
      out << "\n\n";
    }
  }
  {
    std::ofstream out(d / "plot_quantiles.dat");
    out << "# k  epsilon_bound  (blocks per quantile)\n";
    std::map<double, std::map<int, double>> by_q;
    for (const auto& [key, eps] : quantile_table) {
      if (eps) by_q[key.second][key.first] = *eps;
    }
    for (const auto& [q, curve] : by_q) {
      out << "# quantile = " << fmt(q) << '\n';
      for (const auto& [k, v] : curve) out << k << ' ' << fmt(v) << '\n';
      out << "\n\n";
    }
  }
  std::ofstream gp(d / "plots.gp");
  gp << "set xlabel 'iteration k'\n"
     << "set ylabel 'certified success rate'\n"
     << "plot 'plot_success_rate.dat' using 1:2 with linespoints title 'success rate'\n"
     << "pause -1\n"
     << "set ylabel 'certified quantile tolerance'\n"
     << "plot 'plot_quantiles.dat' using 1:2 with linespoints title 'quantile bound'\n"
     << "pause -1\n";
}

void save_posterior(const learned::Posterior& post, const std::string& arch_id,
                    const std::vector<int>& dims, const bounds::PriorGridSpec& grid,
                    const std::string& path) {
  json j;
  j["architecture"] = arch_id;
  j["dims"] = dims;
  j["grid"] = {{"lambda_max", grid.lambda_max}, {"b", grid.b}};
  j["w"] = std::vector<double>(post.w.data(), post.w.data() + post.w.size());
  j["s"] = std::vector<double>(post.s.data(), post.s.data() + post.s.size());
  j["lambda"] =
      std::vector<double>(post.lambda.data(), post.lambda.data() + post.lambda.size());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << '\n';
}

learned::Posterior load_posterior(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j = json::parse(in);
  learned::Posterior post;
  const auto to_vec = [](const json& a) {
    VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
    return v;
  };
  post.w = to_vec(j.at("w"));
  post.s = to_vec(j.at("s"));
  post.lambda = to_vec(j.at("lambda"));
  return post;
}

std::uint64_t config_hash_of_file(const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot open " + config_path);
  const json j = json::parse(in);
  const std::string canonical = j.dump();  // object keys are sorted
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

int run_command(const std::string& command, const CliOptions& opts) {
  CommandContext ctx;
  try {
    std::ifstream in(opts.config_path);
    if (!in) throw ConfigError("", "cannot open config " + opts.config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
    ctx.cfg = parse_config(j);
    ctx.hash = config_hash_of_file(opts.config_path);
    if (opts.seed) ctx.cfg.seed = *opts.seed;
    if (!opts.out_override.empty()) ctx.cfg.out = opts.out_override;
    ctx.threads = opts.threads;
    if (ctx.threads == 0) {
      if (const char* env = std::getenv("FPCERT_THREADS")) ctx.threads = std::atoi(env);
    }
    ctx.strict_finite = opts.strict_finite;
    ctx.out = ctx.cfg.out;
    fs::create_directories(ctx.out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (command == "gen") cmd_gen(ctx);
    else if (command == "run") cmd_run(ctx);
    else if (command == "certify") cmd_certify(ctx);
    else if (command == "train") cmd_train(ctx);
    else if (command == "calibrate") cmd_calibrate(ctx);
    else if (command == "quantiles") cmd_quantiles(ctx);
    else if (command == "report") cmd_report(ctx);
    else if (command == "all") cmd_all(ctx);
    else {
      std::cerr << "unknown command: " << command << '\n';
      return kExitConfig;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    write_manifest(ctx.out, ctx.hash, ctx.cfg.seed, command, false, {});
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace fpcert::report
