#include "velokit/solver.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

namespace velokit {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged:
      return "converged";
    case SolveStatus::maxiter:
      return "maxiter";
    case SolveStatus::error:
      return "error";
  }
  return "error";
}

namespace {

// Scatter the inequality part of a model-ordered multiplier into a length-n_g vector.
Vector scatter_ineq(const Vector& lambda, const ActiveModel& model, int n_ineq) {
  Vector full = Vector::Zero(n_ineq);
  for (std::size_t j = 0; j < model.active.size(); ++j)
    full[model.active[j]] = lambda[model.n_eq_cols + static_cast<Eigen::Index>(j)];
  return full;
}

double complementarity_of(const Vector& lambda, const ActiveModel& model) {
  double c = 0.0;
  for (Eigen::Index j = model.n_eq_cols; j < lambda.size(); ++j)
    c = std::max(c, std::abs(lambda[j] * model.gbar[j]));
  return c;
}

double max_violation(const Vector& g) { return g.size() ? std::max(0.0, -g.minCoeff()) : 0.0; }

VelocityResult velocity_impl(const ConstrainedProblem& p, const Vector& x, const SolverParams& params,
                             const ActiveModel* prev_model, const Vector* prev_lambda,
                             const std::optional<Vector>& warm) {
  if (x.size() != p.dim) throw ConfigError("point has length " + std::to_string(x.size()) + ", expected " +
                                           std::to_string(p.dim));
  if (!x.allFinite()) throw EvaluationError("evaluation failure at x (non-finite point)");
  VelocityResult r;
  r.f = eval_objective(p, x);
  r.grad_f = eval_objective_grad(p, x);
  r.h = eval_eq(p, x);
  r.g = eval_ineq(p, x);
  r.model = assemble_model(r.h, eval_eq_grad(p, x), r.g, eval_ineq_grad(p, x), params.eps_g);
  std::optional<Vector> start = warm;
  if (!start && prev_model && prev_lambda) start = remap_multipliers(*prev_model, *prev_lambda, r.model);
  r.dual = solve_dual(r.model, r.grad_f, params, start);
  r.v = -r.grad_f;
  if (r.model.size() > 0) r.v += r.model.W * r.dual.lambda;
  return r;
}

double d_value(const VelocityResult& vel, double alpha) {
  const double lg = vel.dual.lambda.size() ? vel.dual.lambda.dot(vel.model.gbar) : 0.0;
  return vel.f - lg - vel.v.squaredNorm() / (2.0 * alpha);
}

}  // namespace

VelocityResult velocity(const ConstrainedProblem& p, const Vector& x, const SolverParams& params,
                        const std::optional<Vector>& warm) {
  params.validate();
  return velocity_impl(p, x, params, nullptr, nullptr, warm);
}

StepResult step(const ConstrainedProblem& p, const Vector& x, const SolverParams& params,
                const std::optional<Vector>& warm) {
  StepResult s;
  s.vel = velocity(p, x, params, warm);
  s.x_next = x + params.T * s.vel.v;
  return s;
}

double lagrangian(const ConstrainedProblem& p, const Vector& x, const Vector& lambda, const ActiveModel& model) {
  double l = eval_objective(p, x);
  if (model.n_eq_cols > 0) l -= lambda.head(model.n_eq_cols).dot(eval_eq(p, x));
  if (!model.active.empty()) l -= scatter_ineq(lambda, model, p.n_ineq).dot(eval_ineq(p, x));
  return l;
}

Vector lagrangian_grad(const ConstrainedProblem& p, const Vector& x, const Vector& lambda,
                       const ActiveModel& model) {
  Vector gr = eval_objective_grad(p, x);
  if (model.n_eq_cols > 0) gr -= eval_eq_grad(p, x) * lambda.head(model.n_eq_cols);
  if (!model.active.empty()) gr -= eval_ineq_grad(p, x) * scatter_ineq(lambda, model, p.n_ineq);
  return gr;
}

double lagrangian_merit(const ConstrainedProblem& p, const Vector& x, const Vector& lambda,
                        const ActiveModel& model, double alpha) {
  return lagrangian(p, x, lambda, model) - lagrangian_grad(p, x, lambda, model).squaredNorm() / (2.0 * alpha);
}

LineSearchResult line_search_step(const ConstrainedProblem& p, const Vector& x, const Vector& v,
                                  const Vector& lambda, const ActiveModel& model, const SolverParams& params) {
  LineSearchResult res;
  const double alpha = params.alpha;
  auto merit = [&](double tau) { return lagrangian_merit(p, x + tau * v, lambda, model, alpha); };
  const double t_default = std::min(params.T, 1.0 / alpha);
  res.merit_default = merit(t_default);
  if (v.squaredNorm() == 0.0) {
    res.x_next = x;
    res.step = t_default;
    res.merit = res.merit_default;
    return res;
  }

  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.0, b = 1.0 / alpha;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = merit(c), fd = merit(d);
  for (int it = 0; it < 200 && (b - a) > 1e-10 * (1.0 / alpha); ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = merit(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = merit(d);
    }
  }
  double best = fc >= fd ? c : d;
  double fbest = std::max(fc, fd);
  const double fend = merit(1.0 / alpha);
  if (fend > fbest) {
    best = 1.0 / alpha;
    fbest = fend;
  }
  if (!(fbest >= res.merit_default)) {
    best = t_default;
    fbest = res.merit_default;
  }
  res.step = best;
  res.merit = fbest;
  res.x_next = x + best * v;
  return res;
}

ReuseRun multiplier_reuse_run(const ConstrainedProblem& p, const Vector& x, const Vector& lambda,
                              const ActiveModel& model, const SolverParams& params) {
  ReuseRun run;
  std::vector<char> in_model(static_cast<std::size_t>(p.n_ineq), 0);
  for (int i : model.active) in_model[static_cast<std::size_t>(i)] = 1;
  const Vector lam_g = scatter_ineq(lambda, model, p.n_ineq);

  Vector xj = x;
  for (int j = 0; j < params.max_reuse_steps; ++j) {
    const Vector gr = lagrangian_grad(p, xj, lambda, model);
    if (j > 0 && gr.norm() <= params.tol) break;
    xj = xj - params.T * gr;
    run.points.push_back(xj);
    const Vector g = eval_ineq(p, xj);
    bool ok = true;
    for (Eigen::Index i = 0; i < g.size() && ok; ++i) {
      if (lam_g[i] > 0.0 && g[i] > params.eps_g) ok = false;
      if (!in_model[static_cast<std::size_t>(i)] && g[i] <= params.eps_g) ok = false;
    }
    if (!ok) {
      run.guard_failed_at = static_cast<int>(run.points.size()) - 1;
      break;
    }
  }
  return run;
}

SolveResult solve(const ConstrainedProblem& p, const Vector& x0, const SolverParams& params,
                  const SolveOptions& opts) {
  params.validate();
  if (x0.size() != p.dim)
    throw ConfigError("x0 has length " + std::to_string(x0.size()) + ", expected " + std::to_string(p.dim));
  if (p.convex() && p.meta.mu && params.alpha >= *p.meta.mu)
    spdlog::warn("alpha = {:.4g} >= mu = {:.4g}: outside the range covered by the convergence analysis",
                 params.alpha, *p.meta.mu);

  SolveResult out;
  SolveTrace trace;
  Vector x = x0;
  std::optional<VelocityResult> prev;

  for (int k = 0;; ++k) {
    VelocityResult vel;
    try {
      vel = velocity_impl(p, x, params, params.warm_start_lambda && prev ? &prev->model : nullptr,
                          params.warm_start_lambda && prev ? &prev->dual.lambda : nullptr, std::nullopt);
    } catch (const std::exception& e) {
      out.status = SolveStatus::error;
      out.message = e.what();
      out.iterations = std::max(0, k - 1);
      // out.x_final already holds the last point whose evaluation succeeded.
      if (!prev) {
        out.x_final = x0;
        out.f_final = std::nan("");
        out.kkt_residual = std::nan("");
      }
      break;
    }
    if (!vel.dual.converged) {
      ++trace.inner_failures;
      spdlog::debug("inner solver hit MAXITER_PROX at k = {} (last delta {:.3g})", k, vel.dual.last_delta);
    }

    const double kkt = vel.v.norm();
    const bool converged = kkt <= params.tol;
    const bool terminal = converged || k >= params.maxiter;

    Vector x_next;
    double T_k = 0.0;
    if (!terminal) {
      if (params.line_search) {
        LineSearchResult ls = line_search_step(p, x, vel.v, vel.dual.lambda, vel.model, params);
        x_next = std::move(ls.x_next);
        T_k = ls.step;
      } else if (params.multiplier_reuse) {
        ReuseRun run = multiplier_reuse_run(p, x, vel.dual.lambda, vel.model, params);
        x_next = run.points.empty() ? Vector(x + params.T * vel.v) : run.points.back();
        T_k = params.T * static_cast<double>(std::max<std::size_t>(run.points.size(), 1));
      } else {
        x_next = x + params.T * vel.v;
        T_k = params.T;
      }
    }

    if (opts.record_trace) {
      IterationRecord rec;
      rec.k = k;
      if (opts.keep_vectors) {
        rec.x = x;
        rec.v = vel.v;
        rec.lambda = vel.dual.lambda;
        rec.active = vel.model.active;
      }
      rec.f = vel.f;
      if (opts.record_d) rec.d = d_value(vel, params.alpha);
      rec.active_count = static_cast<int>(vel.model.active.size());
      rec.max_ineq_violation = max_violation(vel.g);
      rec.eq_violation = vel.h.norm();
      rec.inner_iterations = vel.dual.iterations;
      rec.inner_converged = vel.dual.converged;
      rec.step_size = T_k;
      rec.step_norm = terminal ? params.T * kkt : (x_next - x).norm();
      rec.kkt_residual = kkt;
      trace.records.push_back(std::move(rec));
    }

    if (terminal) {
      out.status = converged ? SolveStatus::converged : SolveStatus::maxiter;
      out.iterations = k;
      out.x_final = x;
      out.f_final = vel.f;
      out.kkt_residual = kkt;
      out.complementarity = complementarity_of(vel.dual.lambda, vel.model);
      out.lambda_final = vel.dual.lambda;
      out.active_final = vel.model.active;
      break;
    }
    out.x_final = x;  // last point with a successful evaluation
    out.f_final = vel.f;
    out.kkt_residual = kkt;
    out.lambda_final = vel.dual.lambda;
    out.active_final = vel.model.active;
    out.iterations = k;
    prev = std::move(vel);
    x = std::move(x_next);
  }

  if (trace.inner_failures > 0)
    spdlog::warn("inner solver reached MAXITER_PROX in {} of {} outer iterations", trace.inner_failures,
                 out.iterations + 1);
  trace.status = out.status;
  if (opts.record_trace) out.trace = std::move(trace);
  return out;
}

SolveTrace flow_mode(const ConstrainedProblem& p, const Vector& x0, const SolverParams& params, double horizon,
                     int substeps, bool record_d) {
  if (!(horizon > 0.0) || substeps < 1) throw ConfigError("flow_mode: need horizon > 0 and substeps >= 1");
  SolverParams fp = params;
  fp.T = horizon / substeps;
  fp.maxiter = substeps;
  fp.validate();
  SolveTrace trace;
  Vector x = x0;
  for (int k = 0; k <= substeps; ++k) {
    VelocityResult vel = velocity_impl(p, x, fp, nullptr, nullptr, std::nullopt);
    IterationRecord rec;
    rec.k = k;
    rec.x = x;
    rec.v = vel.v;
    rec.lambda = vel.dual.lambda;
    rec.active = vel.model.active;
    rec.f = vel.f;
    if (record_d) rec.d = d_value(vel, fp.alpha);
    rec.active_count = static_cast<int>(vel.model.active.size());
    rec.max_ineq_violation = max_violation(vel.g);
    rec.eq_violation = vel.h.norm();
    rec.inner_iterations = vel.dual.iterations;
    rec.inner_converged = vel.dual.converged;
    rec.kkt_residual = vel.v.norm();
    rec.step_size = k < substeps ? fp.T : 0.0;
    rec.step_norm = fp.T * rec.kkt_residual;
    if (!vel.dual.converged) ++trace.inner_failures;
    trace.records.push_back(std::move(rec));
    x = x + fp.T * vel.v;
  }
  trace.status = SolveStatus::maxiter;
  return trace;
}

CurvatureEstimate estimate_curvature(const ConstrainedProblem& p, const Vector& x, int iterations, unsigned seed) {
  const Eigen::Index n = p.dim;
  const double eps = 1e-5 * (1.0 + x.norm());
  auto hv = [&](const Vector& u) -> Vector {
    return (eval_objective_grad(p, x + eps * u) - eval_objective_grad(p, x - eps * u)) / (2.0 * eps);
  };
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  auto start = [&] {
    Vector u(n);
    for (Eigen::Index i = 0; i < n; ++i) u[i] = nd(rng);
    return Vector(u / u.norm());
  };

  CurvatureEstimate est;
  Vector u = start();
  for (int it = 0; it < iterations; ++it) {
    Vector w = hv(u);
    est.L = u.dot(w);
    const double nw = w.norm();
    if (nw == 0.0) break;
    u = w / nw;
  }
  est.L = std::abs(est.L);
  // Shifted iteration on L I - H for the bottom of the spectrum.
  u = start();
  double top = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Vector w = est.L * u - hv(u);
    top = u.dot(w);
    const double nw = w.norm();
    if (nw == 0.0) break;
    u = w / nw;
  }
  est.mu = est.L - top;
  return est;
}

double default_step_size(const ConstrainedProblem& p, const Vector& x0, double alpha_T) {
  std::optional<double> L_l = p.meta.L_l ? p.meta.L_l : p.meta.L;
  std::optional<double> mu = p.meta.mu;
  if (!L_l || !mu) {
    const Vector x = x0.size() == p.dim ? x0 : Vector(Vector::Zero(p.dim));
    const CurvatureEstimate est = estimate_curvature(p, x);
    if (!L_l) {
      L_l = est.L;
      spdlog::warn("no curvature metadata; using power-iteration L = {:.4g} at x0 and L_l := L "
                   "(exact only for affine constraints)",
                   est.L);
    }
    if (!mu) mu = std::max(0.0, est.mu);
  }
  const double denom = *L_l + std::max(0.0, *mu);
  if (!(denom > 0.0)) throw ConfigError("cannot derive a default T: L_l + mu must be > 0");
  if (p.meta.L_l_plus_alpha) return (2.0 - alpha_T) / denom;
  return 2.0 / denom;
}

void write_trace_csv(std::ostream& os, const SolveTrace& trace) {
  os << "k,f,d,step_norm,kkt_residual,active_count,max_ineq_violation,eq_violation,inner_iterations\n";
  char buf[512];
  for (const auto& r : trace.records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%d\n", r.k, r.f,
                  r.d ? *r.d : std::nan(""), r.step_norm, r.kkt_residual, r.active_count, r.max_ineq_violation,
                  r.eq_violation, r.inner_iterations);
    os << buf;
  }
}

}  // namespace velokit
