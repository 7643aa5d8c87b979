#include "velokit/cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "velokit/dual.hpp"
#include "velokit/oracle.hpp"

namespace velokit::cli {
namespace {

using Clock = std::chrono::steady_clock;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
  }
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + where + key + "': " + e.what());
  }
}

Vector read_vector(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + "[" + std::to_string(i) + "] is not a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

SparseMatrix read_triplets(const json& j, const std::string& what) {
  reject_unknown(j, {"rows", "cols", "entries"}, what);
  const auto rows = get_as<Eigen::Index>(j, "rows", what + ".");
  const auto cols = get_as<Eigen::Index>(j, "cols", what + ".");
  if (rows < 0 || cols < 0) throw ConfigError(what + ": negative dimension");
  std::vector<Triplet> t;
  if (j.contains("entries")) {
    const json& e = j.at("entries");
    if (!e.is_array()) throw ConfigError(what + ".entries must be an array of [i, j, value]");
    for (std::size_t k = 0; k < e.size(); ++k) {
      const json& r = e[k];
      if (!r.is_array() || r.size() != 3 || !r[0].is_number_integer() || !r[1].is_number_integer() ||
          !r[2].is_number())
        throw ConfigError(what + ".entries[" + std::to_string(k) + "] must be [i, j, value]");
      const auto a = r[0].get<Eigen::Index>(), b = r[1].get<Eigen::Index>();
      if (a < 0 || a >= rows || b < 0 || b >= cols)
        throw ConfigError(what + ".entries[" + std::to_string(k) + "] index out of range");
      t.emplace_back(a, b, r[2].get<double>());
    }
  }
  SparseMatrix M(rows, cols);
  M.setFromTriplets(t.begin(), t.end());
  return M;
}

LoadedProblem load_qp(const json& j) {
  reject_unknown(j, {"type", "name", "Q", "c", "f0", "A_ineq", "b_ineq", "A_eq", "b_eq", "x0", "metadata"},
                 "problem");
  QuadraticProgram qp;
  if (!j.contains("c")) throw ConfigError("problem.c is required");
  qp.c = read_vector(j.at("c"), "problem.c");
  const Eigen::Index n = qp.c.size();
  qp.Q = j.contains("Q") ? read_triplets(j.at("Q"), "problem.Q") : SparseMatrix(n, n);
  qp.f0 = j.value("f0", 0.0);
  qp.A_ineq = j.contains("A_ineq") ? read_triplets(j.at("A_ineq"), "problem.A_ineq") : SparseMatrix(0, n);
  qp.b_ineq = j.contains("b_ineq") ? read_vector(j.at("b_ineq"), "problem.b_ineq") : Vector(0);
  qp.A_eq = j.contains("A_eq") ? read_triplets(j.at("A_eq"), "problem.A_eq") : SparseMatrix(0, n);
  qp.b_eq = j.contains("b_eq") ? read_vector(j.at("b_eq"), "problem.b_eq") : Vector(0);
  try {
    qp.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("problem: ") + e.what());
  }

  ProblemMetadata meta;
  meta.name = j.value("name", std::string("qp"));
  if (j.contains("metadata")) {
    const json& m = j.at("metadata");
    reject_unknown(m, {"L", "mu", "L_l", "objective_convex"}, "problem.metadata");
    if (m.contains("L")) meta.L = get_as<double>(m, "L", "problem.metadata.");
    if (m.contains("mu")) meta.mu = get_as<double>(m, "mu", "problem.metadata.");
    if (m.contains("L_l")) meta.L_l = get_as<double>(m, "L_l", "problem.metadata.");
    if (m.contains("objective_convex")) meta.objective_convex = get_as<bool>(m, "objective_convex", "problem.metadata.");
  }
  // Small instances get exact extreme eigenvalues of Q when not declared.
  if (n <= 500 && (!meta.L || !meta.mu)) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(qp.Q), Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues()[0], hi = es.eigenvalues()[n - 1];
    if (!meta.L) meta.L = std::max(std::abs(lo), std::abs(hi));
    if (!meta.mu && lo >= 0.0) meta.mu = lo;
    if (lo >= -1e-12 * std::max(1.0, hi)) meta.objective_convex = true;
  }
  if (!meta.L_l && meta.L) meta.L_l = meta.L;  // affine constraints

  LoadedProblem lp;
  lp.problem = qp.to_problem(meta);
  lp.problem.x0 = j.contains("x0") ? read_vector(j.at("x0"), "problem.x0") : Vector(Vector::Zero(n));
  if (lp.problem.x0.size() != n) throw ConfigError("problem.x0 must have length " + std::to_string(n));
  lp.qp = std::move(qp);
  lp.label = meta.name;
  return lp;
}

LoadedProblem load_family(const json& j, const std::filesystem::path& base) {
  reject_unknown(j, {"family", "n", "seed", "nu1_factor", "nu2", "samples_csv", "ball_only", "obstacle", "init_noise", "x0"},
                 "problem");
  BenchmarkSpec spec;
  spec.family = family_from_string(get_as<std::string>(j, "family", "problem."));
  if (j.contains("n")) spec.n = get_as<int>(j, "n", "problem.");
  if (j.contains("seed")) spec.seed = get_as<std::uint64_t>(j, "seed", "problem.");
  if (j.contains("nu1_factor")) spec.nu1_factor = get_as<double>(j, "nu1_factor", "problem.");
  if (j.contains("nu2")) spec.nu2 = get_as<double>(j, "nu2", "problem.");
  if (j.contains("samples_csv")) {
    std::filesystem::path pth = get_as<std::string>(j, "samples_csv", "problem.");
    if (pth.is_relative() && !base.empty()) pth = base / pth;
    spec.samples_csv = pth.string();
  }
  if (j.contains("ball_only")) spec.ball_only = get_as<bool>(j, "ball_only", "problem.");
  if (j.contains("init_noise")) spec.init_noise = get_as<double>(j, "init_noise", "problem.");
  if (j.contains("obstacle")) {
    const json& o = j.at("obstacle");
    reject_unknown(o, {"center", "radius"}, "problem.obstacle");
    if (o.contains("center")) {
      const Vector c = read_vector(o.at("center"), "problem.obstacle.center");
      if (c.size() != 2) throw ConfigError("problem.obstacle.center must have 2 entries");
      spec.obstacle_cx = c[0];
      spec.obstacle_cy = c[1];
    }
    if (o.contains("radius")) spec.obstacle_r = get_as<double>(o, "radius", "problem.obstacle.");
  }

  LoadedProblem lp;
  if (spec.family == Family::nu_svm) {
    const SvmSamples s = spec.samples_csv ? read_svm_csv_file(*spec.samples_csv) : generate_svm_samples(spec.n, spec.seed);
    const SvmData d = nu_svm_data(s, spec.nu1_factor, spec.nu2);
    lp.problem = nu_svm_problem(d);
    lp.qp = d.qp;
  } else {
    lp.problem = make_problem(spec);
  }
  if (j.contains("x0")) {
    lp.problem.x0 = read_vector(j.at("x0"), "problem.x0");
    if (lp.problem.x0.size() != lp.problem.dim)
      throw ConfigError("problem.x0 must have length " + std::to_string(lp.problem.dim));
  }
  if (spec.family == Family::random_qp) lp.qp = random_qp_data(spec.n, spec.seed);
  lp.label = std::string(to_string(spec.family)) + " n=" + std::to_string(spec.n) + " seed=" + std::to_string(spec.seed);
  lp.spec = spec;
  return lp;
}

}  // namespace

LoadedProblem load_problem(const json& j, const std::filesystem::path& base) {
  if (j.is_string()) {
    std::filesystem::path pth = j.get<std::string>();
    if (pth.is_relative() && !base.empty()) pth = base / pth;
    std::ifstream in(pth);
    if (!in) throw ConfigError("cannot open problem file " + pth.string());
    json inner;
    try {
      in >> inner;
    } catch (const json::exception& e) {
      throw ConfigError("problem file " + pth.string() + ": " + e.what());
    }
    return load_problem(inner, pth.parent_path());
  }
  if (!j.is_object()) throw ConfigError("problem must be an object or a path");
  if (j.contains("family")) return load_family(j, base);
  if (j.value("type", std::string()) == "qp") return load_qp(j);
  throw ConfigError("problem needs either \"type\": \"qp\" or a \"family\" key");
}

SolverParams resolve_params(const LoadedProblem& lp, const json& pj) {
  static const std::set<std::string> keys = {"T",        "alphaT",           "eps_g",          "omega",
                                             "TOL",      "MAXITER",          "MAXITER_PROX",   "TOL_PROX",
                                             "side_threshold", "line_search", "multiplier_reuse",
                                             "warm_start_lambda", "max_reuse_steps"};
  reject_unknown(pj, keys, "params");

  const ConstrainedProblem& p = lp.problem;
  double alpha_T = 0.4;
  SolverParams s;
  if (lp.spec) {
    s = family_params(lp.spec->family, p);
    alpha_T = s.alpha_T();
  }
  if (pj.contains("alphaT")) alpha_T = get_as<double>(pj, "alphaT", "params.");
  if (pj.contains("T")) {
    s.T = get_as<double>(pj, "T", "params.");
  } else if (!lp.spec || (lp.spec->family == Family::trust_region && pj.contains("alphaT"))) {
    s.T = default_step_size(p, p.x0, alpha_T);
  }
  if (!(s.T > 0.0)) throw ConfigError("invalid parameter T: must be > 0");
  if (!(alpha_T > 0.0 && alpha_T <= 1.0)) throw ConfigError("invalid parameter alpha*T: must satisfy 0 < alpha*T <= 1");
  s.alpha = alpha_T / s.T;

  if (pj.contains("eps_g")) s.eps_g = get_as<double>(pj, "eps_g", "params.");
  if (pj.contains("omega")) s.omega = get_as<double>(pj, "omega", "params.");
  if (pj.contains("TOL")) s.tol = get_as<double>(pj, "TOL", "params.");
  if (pj.contains("MAXITER")) s.maxiter = get_as<int>(pj, "MAXITER", "params.");
  if (pj.contains("MAXITER_PROX")) s.maxiter_prox = get_as<int>(pj, "MAXITER_PROX", "params.");
  if (pj.contains("TOL_PROX")) s.tol_prox = get_as<double>(pj, "TOL_PROX", "params.");
  if (pj.contains("side_threshold")) s.side_threshold = get_as<double>(pj, "side_threshold", "params.");
  if (pj.contains("line_search")) s.line_search = get_as<bool>(pj, "line_search", "params.");
  if (pj.contains("multiplier_reuse")) s.multiplier_reuse = get_as<bool>(pj, "multiplier_reuse", "params.");
  if (pj.contains("warm_start_lambda")) s.warm_start_lambda = get_as<bool>(pj, "warm_start_lambda", "params.");
  if (pj.contains("max_reuse_steps")) s.max_reuse_steps = get_as<int>(pj, "max_reuse_steps", "params.");
  s.validate();
  return s;
}

RunConfig parse_config(const json& j, const std::filesystem::path& base, const json& overrides) {
  reject_unknown(j, {"problem", "params", "x0", "outputs", "verify"}, "");
  if (!j.contains("problem")) throw ConfigError("config needs a \"problem\" entry");
  RunConfig cfg;
  cfg.problem = load_problem(j.at("problem"), base);

  json pj = j.value("params", json::object());
  if (!pj.is_object()) throw ConfigError("params must be a JSON object");
  for (auto it = overrides.begin(); it != overrides.end(); ++it) pj[it.key()] = it.value();
  cfg.params = resolve_params(cfg.problem, pj);

  if (j.contains("x0")) {
    cfg.x0 = read_vector(j.at("x0"), "x0");
    if (cfg.x0->size() != cfg.problem.problem.dim)
      throw ConfigError("x0 must have length " + std::to_string(cfg.problem.problem.dim));
  }
  if (j.contains("outputs")) {
    const json& o = j.at("outputs");
    reject_unknown(o, {"trace_csv", "result_json"}, "outputs");
    auto path_of = [&](const char* key) {
      std::filesystem::path pth = get_as<std::string>(o, key, "outputs.");
      if (pth.is_relative() && !base.empty()) pth = base / pth;
      return pth.string();
    };
    if (o.contains("trace_csv")) cfg.outputs.trace_csv = path_of("trace_csv");
    if (o.contains("result_json")) cfg.outputs.result_json = path_of("result_json");
  }
  if (j.contains("verify")) {
    const json& v = j.at("verify");
    reject_unknown(v, {"oracle_check", "invariant_suite", "d_trace", "corrupt_gradient"}, "verify");
    cfg.verify.oracle_check = v.value("oracle_check", true);
    cfg.verify.invariant_suite = v.value("invariant_suite", true);
    cfg.verify.d_trace = v.value("d_trace", true);
    cfg.verify.corrupt_gradient = v.value("corrupt_gradient", false);
  }
  return cfg;
}

json result_to_json(const SolveResult& r, double wall_time_ms) {
  json j;
  j["x_final"] = std::vector<double>(r.x_final.data(), r.x_final.data() + r.x_final.size());
  j["f_final"] = r.f_final;
  j["kkt_residual"] = r.kkt_residual;
  j["iterations"] = r.iterations;
  j["status"] = to_string(r.status);
  j["wall_time_ms"] = wall_time_ms;
  if (!r.message.empty()) j["message"] = r.message;
  return j;
}

namespace {

int exit_code(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged:
      return 0;
    case SolveStatus::maxiter:
      return 2;
    case SolveStatus::error:
      return 1;
  }
  return 1;
}

}  // namespace

int cmd_solve(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const ConstrainedProblem& p = cfg.problem.problem;
  const Vector x0 = cfg.x0 ? *cfg.x0 : p.x0;
  SolveOptions opts;
  opts.record_trace = cfg.outputs.trace_csv.has_value();
  opts.record_d = opts.record_trace;
  opts.keep_vectors = false;

  const auto t0 = Clock::now();
  SolveResult r;
  try {
    r = solve(p, x0, cfg.params, opts);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

  if (cfg.outputs.trace_csv && r.trace) {
    std::ofstream f(*cfg.outputs.trace_csv);
    if (!f) {
      err << "error: cannot write trace file " << *cfg.outputs.trace_csv << "\n";
      return 1;
    }
    write_trace_csv(f, *r.trace);
  }
  const json j = result_to_json(r, ms);
  if (cfg.outputs.result_json) {
    std::ofstream f(*cfg.outputs.result_json);
    if (!f) {
      err << "error: cannot write result file " << *cfg.outputs.result_json << "\n";
      return 1;
    }
    f << j.dump(2) << "\n";
  } else {
    out << j.dump(2) << "\n";
  }
  if (r.status == SolveStatus::error) err << "error: " << r.message << "\n";
  return exit_code(r.status);
}

std::vector<BenchRow> run_bench(const BenchRequest& req) {
  struct Job {
    int n;
    std::uint64_t seed;
  };
  std::vector<int> sizes = req.sizes;
  std::vector<std::uint64_t> seeds = req.seeds;
  std::sort(sizes.begin(), sizes.end());
  std::sort(seeds.begin(), seeds.end());
  std::vector<Job> jobs;
  for (int n : sizes)
    for (auto s : seeds) jobs.push_back({n, s});

  // Surface configuration errors before any worker starts.
  for (const Job& job : jobs) {
    if (req.family == Family::random_qp || req.family == Family::trust_region)
      if (job.n < 4 || job.n % 4 != 0)
        throw ConfigError("random QP size n must be a positive multiple of 4, got " + std::to_string(job.n));
  }

  int cap = req.threads;
  if (cap <= 0) {
    cap = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("VELOKIT_THREADS")) {
      const int v = std::atoi(env);
      if (v > 0) cap = v;
    }
  }
  const int workers = std::max(1, std::min<int>(cap, static_cast<int>(jobs.size())));

  std::vector<BenchRow> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::string first_error;
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      BenchRow& row = rows[i];
      row.family = req.family;
      row.n = jobs[i].n;
      row.seed = jobs[i].seed;
      try {
        json pj = {{"family", to_string(req.family)}, {"n", jobs[i].n}, {"seed", jobs[i].seed}};
        const LoadedProblem lp = load_problem(pj);
        const SolverParams params = resolve_params(lp, req.params);
        SolveOptions opts;
        opts.record_trace = true;
        opts.keep_vectors = false;
        const auto t0 = Clock::now();
        const SolveResult r = solve(lp.problem, lp.problem.x0, params, opts);
        row.wall_time_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        row.outer_iterations = r.iterations;
        for (const auto& rec : r.trace->records) row.max_inner_iterations = std::max(row.max_inner_iterations, rec.inner_iterations);
        row.active_fraction = lp.problem.n_ineq
                                  ? static_cast<double>(r.active_final.size()) / lp.problem.n_ineq
                                  : 0.0;
        row.status = r.status;
        row.kkt_residual = r.kkt_residual;
      } catch (const std::exception& e) {
        row.status = SolveStatus::error;
        row.kkt_residual = std::nan("");
        std::lock_guard<std::mutex> lock(err_mu);
        if (first_error.empty()) first_error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (!first_error.empty()) spdlog::error("bench: {}", first_error);
  return rows;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "family,n,seed,wall_time_ms,outer_iterations,max_inner_iterations,active_fraction,status,kkt_residual\n";
  for (const auto& r : rows) {
    os << to_string(r.family) << ',' << r.n << ',' << r.seed << ',' << std::setprecision(6) << r.wall_time_ms << ','
       << r.outer_iterations << ',' << r.max_inner_iterations << ',' << std::setprecision(6) << r.active_fraction
       << ',' << to_string(r.status) << ',' << std::setprecision(6) << r.kkt_residual << '\n';
  }
}

int cmd_bench(const BenchRequest& req, std::ostream& out, std::ostream& err) {
  std::vector<BenchRow> rows;
  try {
    // Validate the parameter object once up front so a bad key fails fast.
    json pj = {{"family", to_string(req.family)}, {"n", req.sizes.empty() ? 4 : req.sizes.front()}, {"seed", 0}};
    if (req.sizes.empty() || req.seeds.empty()) throw ConfigError("bench needs at least one size and one seed");
    resolve_params(load_problem(pj), req.params);
    rows = run_bench(req);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  if (req.csv_path) {
    std::ofstream f(*req.csv_path);
    if (!f) {
      err << "error: cannot write " << *req.csv_path << "\n";
      return 1;
    }
    write_bench_csv(f, rows);
  } else {
    write_bench_csv(out, rows);
  }
  int code = 0;
  for (const auto& r : rows) {
    if (r.status == SolveStatus::error) return 1;
    if (r.status == SolveStatus::maxiter) code = 2;
  }
  return code;
}

namespace {

std::string fmt_num(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << v;
  return os.str();
}

ConstrainedProblem with_corrupt_gradient(ConstrainedProblem p) {
  auto g = p.objective_grad;
  p.objective_grad = [g](const Vector& x) -> Vector {
    Vector out = g(x);
    out[0] += 1e-2 * (1.0 + std::abs(out[0]));
    return out;
  };
  return p;
}

// Parameters inside the range covered by the convergence analysis.
SolverParams theory_params(const ConstrainedProblem& p, const SolverParams& base) {
  SolverParams s = base;
  const double mu = *p.meta.mu;
  const double L_l = p.meta.L_l.value_or(p.meta.L.value_or(mu));
  s.alpha = mu / 2.0;
  s.T = p.meta.L_l_plus_alpha ? 2.0 / (L_l + s.alpha + mu) : 2.0 / (L_l + mu);
  if (s.alpha * s.T > 1.0) s.T = 1.0 / s.alpha;
  s.eps_g = 0.0;
  s.side_threshold = 1e-13;
  s.tol_prox = 1e-13;
  s.maxiter_prox = 100000;
  s.tol = 1e-9;
  s.maxiter = std::max(base.maxiter, 3000);
  s.line_search = false;
  s.multiplier_reuse = false;
  return s;
}

double f_star_of(const LoadedProblem& lp) {
  if (lp.qp && lp.qp->b_ineq.size() <= 20) return reference_minimum(*lp.qp).f;
  if (lp.qp) return qp_dual_active_set(*lp.qp).f;
  const ReferenceMinimum r = reference_minimum(lp.problem);
  if (!r.feasible) throw DegenerateModelError("reference minimum not found");
  return r.f;
}

}  // namespace

std::vector<CheckResult> run_verify(const RunConfig& cfg) {
  const ConstrainedProblem& p0 = cfg.problem.problem;
  if (p0.dim > 200 || p0.n_ineq > 20)
    throw ConfigError("verify is limited to desk-scale instances (n <= 200, at most 20 inequalities); got n = " +
                      std::to_string(p0.dim) + " with " + std::to_string(p0.n_ineq) +
                      " inequalities. Use 'solve' or 'bench' for larger problems.");
  const ConstrainedProblem p = cfg.verify.corrupt_gradient ? with_corrupt_gradient(p0) : p0;
  const Vector x0 = cfg.x0 ? *cfg.x0 : p.x0;
  std::vector<CheckResult> checks;

  {  // Analytic gradients against central differences.
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> nd(0.0, 0.5);
    double worst = fd_gradient_check(p, x0).max();
    for (int s = 0; s < 3; ++s) {
      Vector x = x0;
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += nd(rng);
      worst = std::max(worst, fd_gradient_check(p, x).max());
    }
    checks.push_back({"gradient_fd", worst <= 1e-5, "max relative error " + fmt_num(worst)});
  }

  SolveOptions opts;
  opts.record_trace = true;
  const SolveResult run = solve(p, x0, cfg.params, opts);
  {
    const bool ok = run.status == SolveStatus::converged && run.kkt_residual <= cfg.params.tol &&
                    run.complementarity <= 10.0 * cfg.params.tol;
    checks.push_back({"solve_kkt", ok,
                      std::string(to_string(run.status)) + " after " + std::to_string(run.iterations) +
                          " iterations, kkt " + fmt_num(run.kkt_residual) + ", complementarity " +
                          fmt_num(run.complementarity)});
  }

  if (cfg.verify.oracle_check) {
    SolverParams tight = cfg.params;
    tight.tol_prox = 1e-13;
    tight.maxiter_prox = 100000;
    tight.side_threshold = 1e-13;
    double worst = 0.0;
    const auto& recs = run.trace->records;
    const std::size_t stride = std::max<std::size_t>(1, recs.size() / 10);
    for (std::size_t i = 0; i < recs.size(); i += stride) {
      const ActiveModel m = assemble_model(p, recs[i].x, cfg.params.eps_g);
      const Vector gf = eval_objective_grad(p, recs[i].x);
      const DualResult dr = solve_dual(m, gf, tight);
      const KktEnumeration en = brute_force_velocity(m, gf, cfg.params.alpha);
      const bool full_rank = m.size() == 0 || Eigen::FullPivLU<Matrix>(Matrix(m.W)).rank() == m.size();
      const Vector v_dual = -gf + (m.size() ? Vector(m.W * dr.lambda) : Vector(Vector::Zero(gf.size())));
      const double diff = full_rank ? (dr.lambda - en.lambda).norm() : (v_dual - en.v).norm();
      worst = std::max(worst, diff);
    }
    checks.push_back({"dual_vs_enumeration", worst <= 1e-6, "max deviation " + fmt_num(worst)});
  }

  if (cfg.verify.invariant_suite) {
    if (!(p.convex() && p.meta.mu && *p.meta.mu > 0.0)) {
      checks.push_back({"invariant_suite", true, "skipped: instance not flagged convex with mu > 0"});
    } else {
      const SolverParams tp = theory_params(p, cfg.params);
      SolveOptions o;
      o.record_trace = true;
      o.record_d = cfg.verify.d_trace;
      const SolveResult tr = solve(p, x0, tp, o);
      const auto& recs = tr.trace->records;

      int bad = 0;
      double worst = -1e300;
      for (std::size_t k = 0; k + 1 < recs.size(); ++k) {
        const Vector g_next = eval_ineq(p, recs[k + 1].x);
        for (std::size_t a = 0; a < recs[k].active.size(); ++a) {
          if (recs[k].lambda[recs[k].lambda.size() - static_cast<Eigen::Index>(recs[k].active.size()) +
                             static_cast<Eigen::Index>(a)] > 0.0) {
            const double gv = g_next[recs[k].active[a]];
            worst = std::max(worst, gv);
            if (gv > 1e-10) ++bad;
          }
        }
      }
      checks.push_back({"membrane", bad == 0,
                        std::to_string(bad) + " violations, max g_i(x_{k+1}) over lambda_ki > 0: " +
                            (worst > -1e300 ? fmt_num(worst) : std::string("n/a"))});

      const double mu = *p.meta.mu;
      const double L_l = p.meta.L_l.value_or(p.meta.L.value_or(mu)) + (p.meta.L_l_plus_alpha ? tp.alpha : 0.0);
      RateConstants rc{};
      bool rc_ok = true;
      try {
        rc = rate_constants(mu, std::max(L_l, mu), tp.T, tp.alpha);
        rc_ok = rc.c1 > 0.0 && rc.c2 > 0.0 && rc.c2 * tp.T < 1.0;
      } catch (const std::exception&) {
        rc_ok = false;
      }
      checks.push_back({"rate_constants", rc_ok, "c1 = " + fmt_num(rc.c1) + ", c2*T = " + fmt_num(rc.c2 * tp.T)});

      if (cfg.verify.d_trace) {
        int drops = 0;
        double dmax = -1e300;
        for (std::size_t k = 0; k < recs.size(); ++k) {
          dmax = std::max(dmax, *recs[k].d);
          if (k + 1 < recs.size() && *recs[k + 1].d < *recs[k].d - 1e-10 * (1.0 + std::abs(*recs[k].d))) ++drops;
        }
        checks.push_back({"d_monotone", drops == 0, std::to_string(drops) + " decreases"});
        double fstar = std::nan("");
        try {
          fstar = f_star_of(cfg.problem);
        } catch (const std::exception& e) {
          checks.push_back({"d_below_fstar", false, std::string("no reference minimum: ") + e.what()});
        }
        if (std::isfinite(fstar)) {
          checks.push_back({"d_below_fstar", dmax <= fstar + 1e-8 * (1.0 + std::abs(fstar)),
                            "max d - f* = " + fmt_num(dmax - fstar)});
          if (rc_ok) {
            int viol = 0;
            double vmin = 1e300;
            for (std::size_t k = 0; k < recs.size(); ++k) {
              vmin = std::min(vmin, recs[k].v.squaredNorm());
              const double bound = (fstar - *recs[0].d) / (rc.c1 * static_cast<double>(k + 1));
              if (vmin > 1.01 * bound + 1e-14) ++viol;
            }
            checks.push_back({"velocity_sum_bound", viol == 0, std::to_string(viol) + " violations"});
          }
        }
      }

      if (cfg.problem.qp && p.n_eq > 0) {
        const double rate = 1.0 - tp.alpha * tp.T;
        int bad_decay = 0;
        for (std::size_t k = 0; k + 1 < recs.size() && k < 100; ++k) {
          const double hk = recs[k].eq_violation, hk1 = recs[k + 1].eq_violation;
          if (std::abs(hk1 - rate * hk) > 1e-10 * hk + 1e-13) ++bad_decay;
        }
        checks.push_back({"equality_decay", bad_decay == 0, std::to_string(bad_decay) + " steps off (1-alpha*T)^k"});
      }

      if (cfg.problem.qp && p.n_ineq <= 20) {
        int viol8 = 0, viol9 = 0, tested = 0;
        const std::size_t stride = std::max<std::size_t>(1, recs.size() / 5);
        for (std::size_t k = 0; k < recs.size() && tested < 5; k += stride, ++tested) {
          try {
            if (!d_bounds_check(p, recs[k].x, tp, std::max(L_l, mu), 1e-8).ok) ++viol8;
            if (!distance_bound_check(p, recs[k].x, tp, 1e-8).ok) ++viol9;
          } catch (const std::exception&) {
            ++viol8;
          }
        }
        checks.push_back({"d_bounds", viol8 == 0, std::to_string(viol8) + " of " + std::to_string(tested) + " points"});
        checks.push_back({"distance_bound", viol9 == 0, std::to_string(viol9) + " of " + std::to_string(tested) + " points"});
      }
    }
  }
  return checks;
}

int cmd_verify(const RunConfig& cfg, std::ostream& out, std::ostream& err,
               const std::optional<std::string>& report_path) {
  std::vector<CheckResult> checks;
  try {
    checks = run_verify(cfg);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  bool all = true;
  json arr = json::array();
  for (const auto& c : checks) {
    out << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    all = all && c.pass;
    arr.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  }
  const json report = {{"instance", cfg.problem.label}, {"checks", arr}, {"all_pass", all}};
  if (report_path) {
    std::ofstream f(*report_path);
    if (!f) {
      err << "error: cannot write " << *report_path << "\n";
      return 1;
    }
    f << report.dump(2) << "\n";
  } else {
    out << report.dump() << "\n";
  }
  return all ? 0 : 1;
}

namespace {

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, int>) {
        out.push_back(std::stoi(item, &used));
      } else {
        out.push_back(static_cast<T>(std::stoull(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string("invalid entry '") + item + "' in --" + what);
    }
  }
  return out;
}

struct ParamFlags {
  std::optional<double> T, alphaT, eps_g, omega, TOL, TOL_PROX;
  std::optional<int> MAXITER, MAXITER_PROX;
  bool line_search = false, multiplier_reuse = false, warm_start = false;

  void attach(CLI::App* app) {
    app->add_option("--T", T, "step size");
    app->add_option("--alphaT", alphaT, "alpha*T in (0, 1]");
    app->add_option("--eps_g", eps_g, "activation tolerance");
    app->add_option("--omega", omega, "SOR relaxation in (0, 2)");
    app->add_option("--TOL", TOL, "outer tolerance on |x_{k+1}-x_k|/T");
    app->add_option("--MAXITER", MAXITER, "outer iteration cap");
    app->add_option("--MAXITER_PROX", MAXITER_PROX, "inner iteration cap");
    app->add_option("--TOL_PROX", TOL_PROX, "inner tolerance");
    app->add_flag("--line-search", line_search, "enable the merit line search");
    app->add_flag("--multiplier-reuse", multiplier_reuse, "alternate frozen-multiplier gradient steps");
    app->add_flag("--warm-start", warm_start, "warm start multipliers across outer iterations");
  }

  json to_json() const {
    json j = json::object();
    if (T) j["T"] = *T;
    if (alphaT) j["alphaT"] = *alphaT;
    if (eps_g) j["eps_g"] = *eps_g;
    if (omega) j["omega"] = *omega;
    if (TOL) j["TOL"] = *TOL;
    if (MAXITER) j["MAXITER"] = *MAXITER;
    if (MAXITER_PROX) j["MAXITER_PROX"] = *MAXITER_PROX;
    if (TOL_PROX) j["TOL_PROX"] = *TOL_PROX;
    if (line_search) j["line_search"] = true;
    if (multiplier_reuse) j["multiplier_reuse"] = true;
    if (warm_start) j["warm_start_lambda"] = true;
    return j;
  }
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Builds a config from --config or --problem plus command-line outputs.
RunConfig load_run_config(const std::string& config_path, const std::string& problem_path, const json& overrides) {
  json j;
  std::filesystem::path base;
  if (!config_path.empty()) {
    j = read_json_file(config_path);
    base = std::filesystem::path(config_path).parent_path();
  } else if (!problem_path.empty()) {
    j = {{"problem", problem_path}};
  } else {
    throw ConfigError("either --config or --problem is required");
  }
  return parse_config(j, base, overrides);
}

}  // namespace

int run(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("velokit");
  spdlog::set_default_logger(logger);

  CLI::App app{"velokit: velocity-level constrained gradient descent"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  std::string config_path, problem_path, trace_path, result_path;
  ParamFlags solve_flags;
  auto* solve_cmd = app.add_subcommand("solve", "run one solve");
  solve_cmd->add_option("--config", config_path, "run configuration JSON");
  solve_cmd->add_option("--problem", problem_path, "problem JSON");
  solve_cmd->add_option("--trace", trace_path, "trace CSV output");
  solve_cmd->add_option("--result", result_path, "result JSON output (stdout if omitted)");
  solve_flags.attach(solve_cmd);

  std::string family = "random_qp", sizes = "100", seeds = "0", bench_out;
  int threads = 0;
  ParamFlags bench_flags;
  auto* bench_cmd = app.add_subcommand("bench", "scaling table over sizes and seeds");
  bench_cmd->add_option("--family", family, "random_qp|trust_region|nu_svm|catenary");
  bench_cmd->add_option("--sizes", sizes, "comma-separated sizes");
  bench_cmd->add_option("--seeds", seeds, "comma-separated seeds");
  bench_cmd->add_option("--out", bench_out, "CSV output (stdout if omitted)");
  bench_cmd->add_option("--threads", threads, "worker cap (default VELOKIT_THREADS or all cores)");
  bench_flags.attach(bench_cmd);

  std::string v_config, v_problem, report_path, v_seeds;
  bool corrupt = false;
  ParamFlags verify_flags;
  auto* verify_cmd = app.add_subcommand("verify", "desk-scale invariant and oracle checks");
  verify_cmd->add_option("--config", v_config, "run configuration JSON");
  verify_cmd->add_option("--problem", v_problem, "problem JSON");
  verify_cmd->add_option("--report", report_path, "JSON report output");
  verify_cmd->add_option("--seeds", v_seeds, "comma-separated seeds (family problems only)");
  verify_cmd->add_flag("--corrupt-gradient", corrupt, "negative control: perturb the objective gradient");
  verify_flags.attach(verify_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*solve_cmd) {
      RunConfig cfg = load_run_config(config_path, problem_path, solve_flags.to_json());
      if (!trace_path.empty()) cfg.outputs.trace_csv = trace_path;
      if (!result_path.empty()) cfg.outputs.result_json = result_path;
      return cmd_solve(cfg, std::cout, std::cerr);
    }
    if (*bench_cmd) {
      BenchRequest req;
      req.family = family_from_string(family);
      req.sizes = parse_list<int>(sizes, "sizes");
      req.seeds = parse_list<std::uint64_t>(seeds, "seeds");
      req.params = bench_flags.to_json();
      req.threads = threads;
      if (!bench_out.empty()) req.csv_path = bench_out;
      return cmd_bench(req, std::cout, std::cerr);
    }
    if (*verify_cmd) {
      const json ov = verify_flags.to_json();
      std::optional<std::string> rp;
      if (!report_path.empty()) rp = report_path;
      if (v_seeds.empty()) {
        RunConfig cfg = load_run_config(v_config, v_problem, ov);
        cfg.verify.corrupt_gradient = cfg.verify.corrupt_gradient || corrupt;
        return cmd_verify(cfg, std::cout, std::cerr, rp);
      }
      int code = 0;
      for (auto seed : parse_list<std::uint64_t>(v_seeds, "seeds")) {
        json j = v_config.empty() ? json{{"problem", v_problem.empty() ? json() : read_json_file(v_problem)}}
                                  : read_json_file(v_config);
        if (j["problem"].is_string()) j["problem"] = read_json_file(j["problem"].get<std::string>());
        if (!j["problem"].contains("family")) throw ConfigError("--seeds requires a family problem");
        j["problem"]["seed"] = seed;
        RunConfig cfg = parse_config(j, std::filesystem::path(v_config).parent_path(), ov);
        cfg.verify.corrupt_gradient = cfg.verify.corrupt_gradient || corrupt;
        std::cout << "# " << cfg.problem.label << "\n";
        std::optional<std::string> per;
        if (rp) per = *rp + "." + std::to_string(seed) + ".json";
        code = std::max(code, cmd_verify(cfg, std::cout, std::cerr, per));
      }
      return code;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace velokit::cli
