#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "velokit/core.hpp"
#include "velokit/problems.hpp"
#include "velokit/solver.hpp"

namespace velokit::cli {

using nlohmann::json;

struct LoadedProblem {
  ConstrainedProblem problem;
  std::optional<QuadraticProgram> qp;  // when all data is affine/quadratic
  std::optional<BenchmarkSpec> spec;   // when generated from a family
  std::string label;
};

/// Problem JSON: either {"type": "qp", ...} with matrices in triplet form
/// ({"rows", "cols", "entries": [[i, j, v], ...]}), or {"family": ..., "n": ..., "seed": ...}.
/// A string is read as a path relative to `base`.
LoadedProblem load_problem(const json& j, const std::filesystem::path& base = {});

struct Outputs {
  std::optional<std::string> trace_csv;
  std::optional<std::string> result_json;
};

struct VerifyFlags {
  bool oracle_check = true;
  bool invariant_suite = true;
  bool d_trace = true;
  bool corrupt_gradient = false;  // negative control for the gradient check
};

struct RunConfig {
  LoadedProblem problem;
  SolverParams params;
  std::optional<Vector> x0;
  Outputs outputs;
  VerifyFlags verify;
};

/// Parses a run configuration; `overrides` holds parameter values given on the
/// command line (same keys as the "params" object) and wins over the file.
/// Unknown keys anywhere raise ConfigError naming the key.
RunConfig parse_config(const json& j, const std::filesystem::path& base = {}, const json& overrides = json::object());

/// Family defaults for the problem, then the keys of `params_json`.
SolverParams resolve_params(const LoadedProblem& lp, const json& params_json);

json result_to_json(const SolveResult& r, double wall_time_ms);

/// Exit codes: 0 converged, 2 maxiter, 1 error.
int cmd_solve(const RunConfig& cfg, std::ostream& out, std::ostream& err);

struct BenchRequest {
  Family family = Family::random_qp;
  std::vector<int> sizes;
  std::vector<std::uint64_t> seeds;
  json params = json::object();
  std::optional<std::string> csv_path;
  int threads = 0;  // 0: VELOKIT_THREADS or hardware concurrency
};

struct BenchRow {
  Family family;
  int n = 0;
  std::uint64_t seed = 0;
  double wall_time_ms = 0.0;
  int outer_iterations = 0;
  int max_inner_iterations = 0;
  double active_fraction = 0.0;
  SolveStatus status = SolveStatus::error;
  double kkt_residual = 0.0;
};

std::vector<BenchRow> run_bench(const BenchRequest& req);
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);
int cmd_bench(const BenchRequest& req, std::ostream& out, std::ostream& err);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Desk-scale invariant suite; refuses instances with n > 200 or more than 20 inequalities.
std::vector<CheckResult> run_verify(const RunConfig& cfg);
int cmd_verify(const RunConfig& cfg, std::ostream& out, std::ostream& err,
               const std::optional<std::string>& report_path = std::nullopt);

int run(int argc, char** argv);

}  // namespace velokit::cli
