#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "velokit/types.hpp"

namespace velokit {

/// Smoothness / convexity facts a problem may declare about itself.
struct ProblemMetadata {
  std::optional<double> L;    // smoothness of f
  std::optional<double> mu;   // strong convexity of f
  std::optional<double> L_l;  // curvature bound of the Lagrangian
  // When set, the effective Lagrangian bound is L_l + alpha (trust-region recipe).
  bool L_l_plus_alpha = false;
  bool objective_convex = false;
  bool feasible_set_convex = false;
  std::string name;
};

/// min f(x) s.t. h(x) = 0, g(x) >= 0.
///
/// Jacobians are returned transposed, one column per constraint
/// (column i of ineq_grad(x) is the gradient of g_i at x). Evaluators must be
/// pure functions of x so that independent solves may share a problem.
struct ConstrainedProblem {
  int dim = 0;
  int n_ineq = 0;
  int n_eq = 0;

  std::function<double(const Vector&)> objective;
  std::function<Vector(const Vector&)> objective_grad;
  std::function<Vector(const Vector&)> ineq;
  std::function<SparseMatrix(const Vector&)> ineq_grad;
  std::function<Vector(const Vector&)> eq;
  std::function<SparseMatrix(const Vector&)> eq_grad;

  ProblemMetadata meta;
  Vector x0;  // suggested start; may be empty

  bool convex() const { return meta.objective_convex && meta.feasible_set_convex; }
};

// Checked evaluation. Non-finite output raises EvaluationError, a shape that
// disagrees with the declared dimensions raises ConfigError.
double eval_objective(const ConstrainedProblem& p, const Vector& x);
Vector eval_objective_grad(const ConstrainedProblem& p, const Vector& x);
Vector eval_ineq(const ConstrainedProblem& p, const Vector& x);
SparseMatrix eval_ineq_grad(const ConstrainedProblem& p, const Vector& x);
Vector eval_eq(const ConstrainedProblem& p, const Vector& x);
SparseMatrix eval_eq_grad(const ConstrainedProblem& p, const Vector& x);

/// Convex quadratic program in data form:
///   min 1/2 x'Qx + c'x + f0  s.t.  A_ineq x + b_ineq >= 0,  A_eq x + b_eq = 0.
struct QuadraticProgram {
  SparseMatrix Q;
  Vector c;
  double f0 = 0.0;
  SparseMatrix A_ineq;  // n_g x n
  Vector b_ineq;
  SparseMatrix A_eq;  // n_h x n
  Vector b_eq;

  int dim() const { return static_cast<int>(c.size()); }
  void validate() const;
  ConstrainedProblem to_problem(ProblemMetadata meta = {}) const;
};

/// Linearized constraint model at one point.
///
/// Multiplier column j < n_eq_cols belongs to equality j; column
/// n_eq_cols + k belongs to inequality active[k].
template <class Scalar>
struct BasicActiveModel {
  std::vector<int> active;  // ascending inequality indices
  SparseMatrixT<Scalar> W;  // n x (n_eq_cols + active.size())
  VectorT<Scalar> gbar;
  int n_eq_cols = 0;

  Eigen::Index size() const { return W.cols(); }
  Eigen::Index dim() const { return W.rows(); }
  bool is_equality(Eigen::Index j) const { return j < n_eq_cols; }

  /// Stable constraint key: equality e -> e, inequality i -> n_eq_cols + i.
  int constraint_id(Eigen::Index j) const {
    return j < n_eq_cols ? static_cast<int>(j)
                         : n_eq_cols + active[static_cast<std::size_t>(j - n_eq_cols)];
  }
};

using ActiveModel = BasicActiveModel<double>;

/// Outer/inner iteration controls.
struct SolverParams {
  double T = 1.0;       // step size
  double alpha = 0.4;   // constraint-violation decay rate; alpha*T in (0, 1]
  double eps_g = 1e-6;  // activation tolerance
  double omega = 1.0;   // SOR relaxation in (0, 2)
  double tol = 1e-6;    // outer: stop when |x_{k+1} - x_k| <= T * tol
  int maxiter = 1000;
  int maxiter_prox = 200;
  double tol_prox = 1e-6;
  // Right-hand side of the inner complementarity stop test; eps_g*alpha/2 if unset.
  std::optional<double> side_threshold;

  bool line_search = false;
  bool multiplier_reuse = false;
  bool warm_start_lambda = false;
  int max_reuse_steps = 20;

  double alpha_T() const { return alpha * T; }
  double stop_threshold() const { return side_threshold.value_or(eps_g * alpha / 2.0); }

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Sorted indices i with g_i(x) <= eps_g (ties included).
std::vector<int> active_set(const ConstrainedProblem& p, const Vector& x, double eps_g);
std::vector<int> active_set_from_values(const Vector& g, double eps_g);

ActiveModel assemble_model(const ConstrainedProblem& p, const Vector& x, double eps_g);

/// Model from already-evaluated constraint data (avoids re-evaluating g).
ActiveModel assemble_model(const Vector& h, const SparseMatrix& grad_h, const Vector& g,
                           const SparseMatrix& grad_g, double eps_g);

struct MfcqDiagnostic {
  bool ok = true;
  std::string message;
  double equality_sv_ratio = 1.0;  // smallest/largest singular value of the equality block
  double hull_distance = 0.0;      // distance of 0 to the hull of projected inequality normals
};

/// Advisory constraint-qualification check on an assembled model.
MfcqDiagnostic check_mfcq(const ActiveModel& model);

}  // namespace velokit
