#pragma once

// Shared instances for the test binaries.

#include <cstdint>
#include <random>
#include <vector>

#include "velokit/core.hpp"

namespace velokit::testing {

inline SparseMatrix sparse_from(const Matrix& M) { return M.sparseView(0.0, 0.0); }

/// f = (x+1)^2/10, g1 = x >= 0, g2 = 2 - x >= 0.
inline QuadraticProgram fixture_qp() {
  QuadraticProgram qp;
  qp.Q = sparse_from(Matrix::Constant(1, 1, 0.2));
  qp.c = Vector::Constant(1, 0.2);
  qp.f0 = 0.1;
  Matrix A(2, 1);
  A << 1.0, -1.0;
  qp.A_ineq = sparse_from(A);
  qp.b_ineq = Vector(2);
  qp.b_ineq << 0.0, 2.0;
  qp.A_eq.resize(0, 1);
  qp.b_eq.resize(0);
  return qp;
}

inline ConstrainedProblem fixture_problem() {
  ProblemMetadata meta;
  meta.L = 0.2;
  meta.mu = 0.2;
  meta.L_l = 0.2;
  meta.objective_convex = true;
  meta.feasible_set_convex = true;
  meta.name = "fixture_1d";
  ConstrainedProblem p = fixture_qp().to_problem(meta);
  p.x0 = Vector::Constant(1, 1.5);
  return p;
}

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out[i++] = e;
  return out;
}

/// Hand-built active model from dense columns.
inline ActiveModel make_model(const Matrix& W, const Vector& gbar, int n_eq_cols) {
  ActiveModel m;
  m.W = sparse_from(W);
  m.gbar = gbar;
  m.n_eq_cols = n_eq_cols;
  for (Eigen::Index j = n_eq_cols; j < W.cols(); ++j) m.active.push_back(static_cast<int>(j - n_eq_cols));
  return m;
}

struct DualInstance {
  ActiveModel model;
  Vector grad_f;
};

/// Random linearized model: Gaussian W (n x (n_eq + n_ineq)), gbar and grad f.
/// Columns may be dependent when n_eq + n_ineq > n.
inline DualInstance random_dual_instance(std::mt19937_64& rng, int n, int n_eq, int n_ineq) {
  std::normal_distribution<double> nd;
  Matrix W(n, n_eq + n_ineq);
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = nd(rng);
  Vector gbar(n_eq + n_ineq), gf(n);
  for (Eigen::Index i = 0; i < gbar.size(); ++i) gbar[i] = nd(rng);
  for (Eigen::Index i = 0; i < gf.size(); ++i) gf[i] = nd(rng);
  return {make_model(W, gbar, n_eq), gf};
}

}  // namespace velokit::testing
