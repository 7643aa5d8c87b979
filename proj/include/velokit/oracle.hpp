#pragma once

// Desk-scale reference computations. Everything here is dense and exponential in
// the number of inequalities on purpose: it is only used to check the solver.

#include <optional>
#include <vector>

#include "velokit/core.hpp"

namespace velokit {

struct KktEnumeration {
  std::vector<int> pattern;  // model column offsets (inequality part) forced active
  Vector v;                  // primal part: velocity or minimizer
  Vector lambda;
  bool feasible = false;
};

/// Exact velocity QP  min 1/2|v + grad f|^2  s.t. linearized constraints,
/// by trying every subset of active inequalities. At most 20 inequalities.
KktEnumeration brute_force_velocity(const ActiveModel& model, const Vector& grad_f, double alpha);

/// Same, but returns the multiplier only (the KKT-enumeration dual oracle).
Vector enumeration_multiplier(const ActiveModel& model, const Vector& grad_f, double alpha);

struct ReferenceMinimum {
  Vector x;
  double f = 0.0;
  Vector lambda;  // equalities first, then the entries of `subset` in order
  std::vector<int> subset;
  std::vector<int> pattern;  // indices of `subset` held at g_i = 0
  bool feasible = false;
};

/// f*_I = min f s.t. h = 0, g_i >= 0 for i in subset, by KKT pattern enumeration.
/// Each pattern is an equality-constrained problem solved by Newton's method on
/// the KKT system with finite-difference Lagrangian Hessians. Convex instances only.
ReferenceMinimum reference_minimum(const ConstrainedProblem& p, const std::vector<int>& subset,
                                   std::optional<Vector> start = std::nullopt);

/// All inequalities.
ReferenceMinimum reference_minimum(const ConstrainedProblem& p);

/// Data-form variant; exact linear algebra, no finite differences.
ReferenceMinimum reference_minimum(const QuadraticProgram& qp, const std::vector<int>& subset);
ReferenceMinimum reference_minimum(const QuadraticProgram& qp);

/// Strictly convex QP of any size through a finite active-set method on its
/// bound-constrained dual (multipliers of the inequalities >= 0).
ReferenceMinimum qp_dual_active_set(const QuadraticProgram& qp, int max_iterations = 100000);

/// d(x) = l(x, lambda(x)) - |v(x)|^2/(2 alpha) with lambda from solve_dual.
double dual_merit_d(const ConstrainedProblem& p, const Vector& x, const SolverParams& params);

/// Same quantity with the multiplier from brute_force_velocity.
double dual_merit_d_exact(const ConstrainedProblem& p, const Vector& x, double alpha, double eps_g);

struct DBoundsReport {
  double d = 0.0;
  double f_star_I = 0.0;
  double v_sq = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double lower_gap = 0.0;  // d - lower (>= 0 when the bound holds)
  double upper_gap = 0.0;  // upper - d
  bool ok = true;
};

/// f*_I - (L_l/(2 alpha^2))(1 - alpha/L_l)|v|^2 <= d <= f*_I - (1/(2 alpha))(1 - alpha/mu)|v|^2 with I = I_x.
/// mu is taken from the problem metadata.
DBoundsReport d_bounds_check(const ConstrainedProblem& p, const Vector& x, const SolverParams& params,
                             double L_l, double rel_tol = 1e-8);

struct DistanceBoundReport {
  double d = 0.0;
  double bound_I = 0.0;     // f*_I - ((mu - alpha)/2)|x - x*_I|^2
  double bound_full = 0.0;  // f*   - ((mu - alpha)/2)|x - x*|^2
  bool ok = true;
};

DistanceBoundReport distance_bound_check(const ConstrainedProblem& p, const Vector& x, const SolverParams& params,
                                         double rel_tol = 1e-8);

struct RateConstants {
  double c1 = 0.0;
  double c2 = 0.0;
};

/// c1 = T(mu/alpha - 1)(1 - mu T/2), c2 = 2 alpha (1 - mu T/2)(mu - alpha)/(L_l - alpha).
/// Requires 0 < alpha < mu <= L_l and 0 < T <= 2/(L_l + mu).
RateConstants rate_constants(double mu, double L_l, double T, double alpha);

/// Upper bound on the multiplier of a single mu_g-strongly concave, L_g-smooth
/// constraint: (alpha + L(1 + dist sqrt(L_g / (2 g(x_g))))) / mu_g.
double multiplier_bound(double mu_g, double L_g, double g_at_max, double L, double dist_xf_xg, double alpha);

/// alpha + L(2 + |Q^{-1} c| sqrt(2)/2), the curvature bound used for the unit-ball trust region.
double trust_region_lagrangian_bound(double alpha, double L, double norm_Qinv_c);

struct GradientCheck {
  double objective = 0.0;  // max relative error, per evaluator
  double ineq = 0.0;
  double eq = 0.0;
  double max() const;
};

/// Central differences with step h against the analytic gradients at x.
/// Error is |analytic - fd|_inf / max(1, |fd|_inf) per evaluator.
GradientCheck fd_gradient_check(const ConstrainedProblem& p, const Vector& x, double h = 1e-6);

}  // namespace velokit
