#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "velokit/core.hpp"
#include "velokit/dual.hpp"

namespace velokit {

enum class SolveStatus { converged, maxiter, error };

const char* to_string(SolveStatus s);

struct IterationRecord {
  int k = 0;
  Vector x;
  Vector v;
  Vector lambda;
  std::vector<int> active;
  double f = 0.0;
  std::optional<double> d;
  int active_count = 0;
  double max_ineq_violation = 0.0;  // max(0, -min_i g_i(x_k))
  double eq_violation = 0.0;        // |h(x_k)|
  int inner_iterations = 0;
  bool inner_converged = true;
  double step_size = 0.0;  // T_k actually used (0 on the terminal record)
  double step_norm = 0.0;  // |x_{k+1} - x_k| (tentative T|v_k| on the terminal record)
  double kkt_residual = 0.0;
};

struct SolveTrace {
  std::vector<IterationRecord> records;
  SolveStatus status = SolveStatus::maxiter;
  int inner_failures = 0;
};

struct SolveResult {
  Vector x_final;
  double f_final = 0.0;
  double kkt_residual = 0.0;
  double complementarity = 0.0;  // max_i |lambda_i gbar_i| at x_final
  int iterations = 0;
  SolveStatus status = SolveStatus::maxiter;
  std::string message;
  Vector lambda_final;
  std::vector<int> active_final;
  std::optional<SolveTrace> trace;
};

struct SolveOptions {
  bool record_trace = false;
  bool record_d = false;       // evaluate d(x_k) for every record
  bool keep_vectors = true;    // store x_k, v_k, lambda_k in records
};

/// Velocity at x together with the dual solve and model that produced it.
struct VelocityResult {
  Vector v;
  DualResult dual;
  ActiveModel model;
  Vector grad_f;
  double f = 0.0;
  Vector g;  // all inequality values at x
  Vector h;
};

/// v(x) = -grad f(x) + W lambda(x).
VelocityResult velocity(const ConstrainedProblem& p, const Vector& x, const SolverParams& params,
                        const std::optional<Vector>& warm = std::nullopt);

struct StepResult {
  Vector x_next;
  VelocityResult vel;
};

/// x_{k+1} = x_k + T v_k.
StepResult step(const ConstrainedProblem& p, const Vector& x, const SolverParams& params,
                const std::optional<Vector>& warm = std::nullopt);

SolveResult solve(const ConstrainedProblem& p, const Vector& x0, const SolverParams& params,
                  const SolveOptions& opts = {});

/// l(x, lambda) = f(x) - lambda' (h(x), g_active(x)), lambda ordered as in `model`.
double lagrangian(const ConstrainedProblem& p, const Vector& x, const Vector& lambda, const ActiveModel& model);

/// grad_x l = grad f - W(x) lambda, with W(x) rebuilt at x for the constraints of `model`.
Vector lagrangian_grad(const ConstrainedProblem& p, const Vector& x, const Vector& lambda,
                       const ActiveModel& model);

/// l(x, lambda) - |grad_x l(x, lambda)|^2 / (2 alpha).
double lagrangian_merit(const ConstrainedProblem& p, const Vector& x, const Vector& lambda,
                        const ActiveModel& model, double alpha);

struct LineSearchResult {
  Vector x_next;
  double step = 0.0;   // T_k
  double merit = 0.0;  // merit at T_k
  double merit_default = 0.0;
};

/// Golden-section maximization of tau -> merit(x + tau v, lambda) over (0, 1/alpha].
/// Never returns a worse merit than the default step params.T.
LineSearchResult line_search_step(const ConstrainedProblem& p, const Vector& x, const Vector& v,
                                  const Vector& lambda, const ActiveModel& model, const SolverParams& params);

struct ReuseRun {
  std::vector<Vector> points;  // x_1, x_2, ...; x_1 is the ordinary step
  int guard_failed_at = -1;    // index into points where the guard first failed, -1 if never
};

/// Gradient steps on l(., lambda_k) with lambda_k frozen, while every inequality
/// with lambda_ik > 0 stays at g_i <= eps_g and no new inequality activates.
ReuseRun multiplier_reuse_run(const ConstrainedProblem& p, const Vector& x, const Vector& lambda,
                              const ActiveModel& model, const SolverParams& params);

/// Fixed-step Euler run with T = horizon / substeps; no stopping test.
SolveTrace flow_mode(const ConstrainedProblem& p, const Vector& x0, const SolverParams& params, double horizon,
                     int substeps, bool record_d = false);

/// Extreme Hessian eigenvalue estimates of f at x by power iteration on
/// finite-difference Hessian-vector products.
struct CurvatureEstimate {
  double L = 0.0;
  double mu = 0.0;
};
CurvatureEstimate estimate_curvature(const ConstrainedProblem& p, const Vector& x, int iterations = 100,
                                     unsigned seed = 1);

/// T = 2/(L_l + mu) from metadata (estimated when absent). For the alpha-augmented
/// bound L_l + alpha with alpha = alphaT / T this is solved for T in closed form.
double default_step_size(const ConstrainedProblem& p, const Vector& x0, double alpha_T);

/// Writes k,f,d,step_norm,kkt_residual,active_count,max_ineq_violation,eq_violation,inner_iterations.
void write_trace_csv(std::ostream& os, const SolveTrace& trace);

}  // namespace velokit
