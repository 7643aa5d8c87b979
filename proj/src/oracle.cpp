#include "velokit/oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "velokit/solver.hpp"

namespace velokit {
namespace {

constexpr int kMaxEnumerated = 20;

// Bitmasks over k items ordered by popcount, then numerically.
std::vector<std::uint32_t> masks_by_size(int k) {
  std::vector<std::uint32_t> out(std::size_t{1} << k);
  std::iota(out.begin(), out.end(), 0u);
  std::stable_sort(out.begin(), out.end(),
                   [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) < std::popcount(b); });
  return out;
}

Matrix dense_columns(const SparseMatrix& J) { return Matrix(J); }

}  // namespace

KktEnumeration brute_force_velocity(const ActiveModel& model, const Vector& grad_f, double alpha) {
  const Eigen::Index m = model.size();
  const int n_eq = model.n_eq_cols;
  const int k = static_cast<int>(m) - n_eq;
  if (k > kMaxEnumerated) throw ConfigError("brute_force_velocity: more than 20 active inequalities");
  KktEnumeration res;
  if (m == 0) {
    res.v = -grad_f;
    res.lambda = Vector(0);
    res.feasible = true;
    return res;
  }
  const Matrix W = dense_columns(model.W);
  const Vector Wg = W.transpose() * grad_f;
  const double scale = (1.0 + grad_f.norm() + alpha * model.gbar.norm()) * (1.0 + W.colwise().norm().maxCoeff());
  const double tol = 1e-9 * scale;

  for (std::uint32_t mask : masks_by_size(k)) {
    std::vector<Eigen::Index> cols;
    for (int e = 0; e < n_eq; ++e) cols.push_back(e);
    for (int j = 0; j < k; ++j)
      if (mask & (1u << j)) cols.push_back(n_eq + j);
    const Eigen::Index s = static_cast<Eigen::Index>(cols.size());

    Vector lam = Vector::Zero(m);
    if (s > 0) {
      Matrix WS(W.rows(), s);
      Vector rhs(s);
      for (Eigen::Index a = 0; a < s; ++a) {
        WS.col(a) = W.col(cols[a]);
        rhs[a] = Wg[cols[a]] - alpha * model.gbar[cols[a]];
      }
      const Matrix G = WS.transpose() * WS;
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(G);
      const Vector ls = cod.solve(rhs);
      if ((G * ls - rhs).norm() > tol) continue;  // inconsistent pattern
      bool signs = true;
      for (Eigen::Index a = 0; a < s; ++a) {
        if (cols[a] >= n_eq && ls[a] < -tol) signs = false;
        lam[cols[a]] = ls[a];
      }
      if (!signs) continue;
    }
    for (Eigen::Index j = n_eq; j < m; ++j) lam[j] = std::max(lam[j], 0.0);
    const Vector v = -grad_f + W * lam;
    bool primal = true;
    for (Eigen::Index j = n_eq; j < m && primal; ++j) {
      if (W.col(j).dot(v) + alpha * model.gbar[j] < -tol) primal = false;
    }
    for (Eigen::Index e = 0; e < n_eq && primal; ++e) {
      if (std::abs(W.col(e).dot(v) + alpha * model.gbar[e]) > tol) primal = false;
    }
    if (!primal) continue;
    res.v = v;
    res.lambda = lam;
    res.feasible = true;
    for (int j = 0; j < k; ++j)
      if (mask & (1u << j)) res.pattern.push_back(j);
    return res;
  }
  throw DegenerateModelError("KKT enumeration found no consistent pattern (constraint qualification fails?)");
}

Vector enumeration_multiplier(const ActiveModel& model, const Vector& grad_f, double alpha) {
  return brute_force_velocity(model, grad_f, alpha).lambda;
}

namespace {

struct PatternSolve {
  Vector x;
  Vector lambda;  // eq then pattern ineq
  bool ok = false;
};

// min f s.t. h = 0, g_i = 0 (i in idx) by Newton on the KKT system.
PatternSolve newton_pattern(const ConstrainedProblem& p, const std::vector<int>& idx, const Vector& start) {
  const Eigen::Index n = p.dim;
  const Eigen::Index m = p.n_eq + static_cast<Eigen::Index>(idx.size());
  PatternSolve out;
  Vector x = start;
  Vector lam = Vector::Zero(m);

  auto constraints = [&](const Vector& y, Vector& c, Matrix& J) {
    c.resize(m);
    J.resize(n, m);
    const Vector h = eval_eq(p, y);
    c.head(p.n_eq) = h;
    if (p.n_eq > 0) J.leftCols(p.n_eq) = Matrix(eval_eq_grad(p, y));
    if (!idx.empty()) {
      const Vector g = eval_ineq(p, y);
      const Matrix Jg = Matrix(eval_ineq_grad(p, y));
      for (std::size_t a = 0; a < idx.size(); ++a) {
        c[p.n_eq + static_cast<Eigen::Index>(a)] = g[idx[a]];
        J.col(p.n_eq + static_cast<Eigen::Index>(a)) = Jg.col(idx[a]);
      }
    }
  };
  auto grad_l = [&](const Vector& y, const Vector& l) -> Vector {
    Vector c;
    Matrix J;
    constraints(y, c, J);
    return eval_objective_grad(p, y) - J * l;
  };

  for (int it = 0; it < 60; ++it) {
    Vector c;
    Matrix J;
    constraints(x, c, J);
    const Vector gl = eval_objective_grad(p, x) - J * lam;
    const double res = gl.norm() + c.norm();
    const double scale = 1.0 + eval_objective_grad(p, x).norm();
    if (res <= 1e-11 * scale) {
      out.ok = true;
      break;
    }
    const double eps = 1e-5 * (1.0 + x.norm());
    Matrix H(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector e = Vector::Zero(n);
      e[i] = eps;
      H.col(i) = (grad_l(x + e, lam) - grad_l(x - e, lam)) / (2.0 * eps);
    }
    H = 0.5 * (H + H.transpose()).eval();
    Matrix K = Matrix::Zero(n + m, n + m);
    K.topLeftCorner(n, n) = H;
    K.topRightCorner(n, m) = -J;
    K.bottomLeftCorner(m, n) = J.transpose();
    Vector rhs(n + m);
    rhs << -gl, -c;
    const Vector delta = Eigen::CompleteOrthogonalDecomposition<Matrix>(K).solve(rhs);
    if (!delta.allFinite()) break;
    x += delta.head(n);
    lam += delta.tail(m);
  }
  if (!out.ok) {
    // Last chance: accept a looser residual when Newton stalls on round-off.
    Vector c;
    Matrix J;
    constraints(x, c, J);
    const Vector gl = eval_objective_grad(p, x) - J * lam;
    out.ok = gl.norm() + c.norm() <= 1e-8 * (1.0 + eval_objective_grad(p, x).norm());
  }
  out.x = x;
  out.lambda = lam;
  return out;
}

}  // namespace

ReferenceMinimum reference_minimum(const ConstrainedProblem& p, const std::vector<int>& subset,
                                   std::optional<Vector> start) {
  const int k = static_cast<int>(subset.size());
  if (k > kMaxEnumerated) throw ConfigError("reference_minimum: subset larger than 20 inequalities");
  Vector x0 = start ? *start : (p.x0.size() == p.dim ? p.x0 : Vector(Vector::Zero(p.dim)));
  ReferenceMinimum best;
  best.subset = subset;

  for (std::uint32_t mask : masks_by_size(k)) {
    std::vector<int> idx, pos;
    for (int j = 0; j < k; ++j) {
      if (mask & (1u << j)) {
        idx.push_back(subset[static_cast<std::size_t>(j)]);
        pos.push_back(j);
      }
    }
    PatternSolve ps = newton_pattern(p, idx, x0);
    if (!ps.ok) continue;
    const double tol = 1e-8 * (1.0 + ps.lambda.lpNorm<Eigen::Infinity>());
    bool ok = true;
    for (std::size_t a = 0; a < idx.size() && ok; ++a)
      if (ps.lambda[p.n_eq + static_cast<Eigen::Index>(a)] < -tol) ok = false;
    if (!ok) continue;
    const Vector g = eval_ineq(p, ps.x);
    for (int j = 0; j < k && ok; ++j)
      if (!(mask & (1u << j)) && g[subset[static_cast<std::size_t>(j)]] < -1e-9 * (1.0 + ps.x.norm())) ok = false;
    if (!ok) continue;

    best.x = ps.x;
    best.f = eval_objective(p, ps.x);
    best.lambda = Vector::Zero(p.n_eq + k);
    best.lambda.head(p.n_eq) = ps.lambda.head(p.n_eq);
    for (std::size_t a = 0; a < pos.size(); ++a)
      best.lambda[p.n_eq + pos[a]] = std::max(0.0, ps.lambda[p.n_eq + static_cast<Eigen::Index>(a)]);
    best.pattern = pos;
    best.feasible = true;
    return best;
  }
  return best;  // infeasible subset system
}

ReferenceMinimum reference_minimum(const ConstrainedProblem& p) {
  std::vector<int> all(static_cast<std::size_t>(p.n_ineq));
  std::iota(all.begin(), all.end(), 0);
  return reference_minimum(p, all);
}

namespace {

struct QpDense {
  Matrix Qinv;
  Vector Qinv_c;
  Matrix A;  // eq rows first, then inequality rows
  Vector b;
  Matrix M;  // A Q^-1 A'
  Vector r0; // b - A Q^-1 c
  int n_eq = 0;
};

QpDense make_dense(const QuadraticProgram& qp, const std::vector<int>& subset) {
  qp.validate();
  QpDense d;
  const Eigen::Index n = qp.dim();
  const Matrix Q = Matrix(qp.Q);
  Eigen::LLT<Matrix> llt(Q);
  if (llt.info() != Eigen::Success) throw ConfigError("reference QP: Q must be positive definite");
  d.Qinv = llt.solve(Matrix::Identity(n, n));
  d.Qinv_c = llt.solve(qp.c);
  d.n_eq = static_cast<int>(qp.b_eq.size());
  const Eigen::Index rows = d.n_eq + static_cast<Eigen::Index>(subset.size());
  d.A.resize(rows, n);
  d.b.resize(rows);
  if (d.n_eq > 0) {
    d.A.topRows(d.n_eq) = Matrix(qp.A_eq);
    d.b.head(d.n_eq) = qp.b_eq;
  }
  const Matrix Ai = qp.A_ineq.rows() ? Matrix(qp.A_ineq) : Matrix(0, n);
  for (std::size_t a = 0; a < subset.size(); ++a) {
    d.A.row(d.n_eq + static_cast<Eigen::Index>(a)) = Ai.row(subset[a]);
    d.b[d.n_eq + static_cast<Eigen::Index>(a)] = qp.b_ineq[subset[a]];
  }
  d.M = d.A * d.Qinv * d.A.transpose();
  d.r0 = d.b - d.A * d.Qinv_c;
  return d;
}

double qp_value(const QuadraticProgram& qp, const Vector& x) { return 0.5 * x.dot(qp.Q * x) + qp.c.dot(x) + qp.f0; }

// Solves M_FF y = -r0_F; returns false when the system is inconsistent.
bool solve_free(const QpDense& d, const std::vector<Eigen::Index>& F, Vector& y) {
  const Eigen::Index s = static_cast<Eigen::Index>(F.size());
  y.resize(s);
  if (s == 0) return true;
  Matrix MF(s, s);
  Vector rF(s);
  for (Eigen::Index a = 0; a < s; ++a) {
    rF[a] = -d.r0[F[a]];
    for (Eigen::Index b = 0; b < s; ++b) MF(a, b) = d.M(F[a], F[b]);
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(MF);
  y = cod.solve(rF);
  return (MF * y - rF).norm() <= 1e-9 * (1.0 + rF.norm() + MF.norm() * y.norm());
}

}  // namespace

ReferenceMinimum reference_minimum(const QuadraticProgram& qp, const std::vector<int>& subset) {
  const int k = static_cast<int>(subset.size());
  if (k > kMaxEnumerated) throw ConfigError("reference_minimum: subset larger than 20 inequalities");
  const QpDense d = make_dense(qp, subset);
  ReferenceMinimum best;
  best.subset = subset;
  for (std::uint32_t mask : masks_by_size(k)) {
    std::vector<Eigen::Index> F;
    for (int e = 0; e < d.n_eq; ++e) F.push_back(e);
    for (int j = 0; j < k; ++j)
      if (mask & (1u << j)) F.push_back(d.n_eq + j);
    Vector y;
    if (!solve_free(d, F, y)) continue;
    Vector lam = Vector::Zero(d.A.rows());
    bool ok = true;
    const double tol = 1e-10 * (1.0 + y.lpNorm<Eigen::Infinity>());
    for (std::size_t a = 0; a < F.size(); ++a) {
      lam[F[a]] = y[static_cast<Eigen::Index>(a)];
      if (F[a] >= d.n_eq && lam[F[a]] < -tol) ok = false;
    }
    if (!ok) continue;
    for (Eigen::Index j = d.n_eq; j < lam.size(); ++j) lam[j] = std::max(lam[j], 0.0);
    const Vector x = d.Qinv * (d.A.transpose() * lam) - d.Qinv_c;
    const Vector slack = d.A * x + d.b;
    const double ptol = 1e-9 * (1.0 + d.b.lpNorm<Eigen::Infinity>() + x.norm());
    for (int j = 0; j < k && ok; ++j)
      if (!(mask & (1u << j)) && slack[d.n_eq + j] < -ptol) ok = false;
    if (!ok) continue;
    best.x = x;
    best.f = qp_value(qp, x);
    best.lambda = lam;
    for (int j = 0; j < k; ++j)
      if (mask & (1u << j)) best.pattern.push_back(j);
    best.feasible = true;
    return best;
  }
  return best;
}

ReferenceMinimum reference_minimum(const QuadraticProgram& qp) {
  std::vector<int> all(static_cast<std::size_t>(qp.b_ineq.size()));
  std::iota(all.begin(), all.end(), 0);
  return reference_minimum(qp, all);
}

ReferenceMinimum qp_dual_active_set(const QuadraticProgram& qp, int max_iterations) {
  std::vector<int> all(static_cast<std::size_t>(qp.b_ineq.size()));
  std::iota(all.begin(), all.end(), 0);
  const QpDense d = make_dense(qp, all);
  const Eigen::Index m = d.A.rows();
  const double tol = 1e-11 * (1.0 + d.r0.lpNorm<Eigen::Infinity>()) * (1.0 + d.M.diagonal().maxCoeff());

  Vector lam = Vector::Zero(m);
  std::vector<char> free(static_cast<std::size_t>(m), 0);
  for (int e = 0; e < d.n_eq; ++e) free[static_cast<std::size_t>(e)] = 1;

  ReferenceMinimum out;
  out.subset = all;
  for (int it = 0; it < max_iterations; ++it) {
    std::vector<Eigen::Index> F;
    for (Eigen::Index j = 0; j < m; ++j)
      if (free[static_cast<std::size_t>(j)]) F.push_back(j);
    Vector y;
    solve_free(d, F, y);
    Vector cand = Vector::Zero(m);
    for (std::size_t a = 0; a < F.size(); ++a) cand[F[a]] = y[static_cast<Eigen::Index>(a)];

    // Ratio test toward the subspace minimizer.
    double t = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index j : F) {
      if (j < d.n_eq || cand[j] >= 0.0) continue;
      const double denom = lam[j] - cand[j];
      const double tj = denom > 0.0 ? lam[j] / denom : 0.0;
      if (tj < t) {
        t = tj;
        blocking = j;
      }
    }
    lam += t * (cand - lam);
    if (blocking >= 0) {
      for (Eigen::Index j : F)
        if (j >= d.n_eq && lam[j] <= 0.0) {
          lam[j] = 0.0;
          free[static_cast<std::size_t>(j)] = 0;
        }
      free[static_cast<std::size_t>(blocking)] = 0;
      lam[blocking] = 0.0;
      continue;
    }
    // Subspace optimum reached; price the bound-held multipliers.
    const Vector grad = d.M * lam + d.r0;
    Eigen::Index enter = -1;
    double most = -tol;
    for (Eigen::Index j = d.n_eq; j < m; ++j) {
      if (!free[static_cast<std::size_t>(j)] && grad[j] < most) {
        most = grad[j];
        enter = j;
      }
    }
    if (enter < 0) {
      out.lambda = lam;
      out.x = d.Qinv * (d.A.transpose() * lam) - d.Qinv_c;
      out.f = qp_value(qp, out.x);
      for (Eigen::Index j = d.n_eq; j < m; ++j)
        if (free[static_cast<std::size_t>(j)]) out.pattern.push_back(static_cast<int>(j - d.n_eq));
      out.feasible = true;
      return out;
    }
    free[static_cast<std::size_t>(enter)] = 1;
  }
  throw DegenerateModelError("qp_dual_active_set: iteration limit reached");
}

double dual_merit_d(const ConstrainedProblem& p, const Vector& x, const SolverParams& params) {
  const VelocityResult vel = velocity(p, x, params);
  const double lg = vel.dual.lambda.size() ? vel.dual.lambda.dot(vel.model.gbar) : 0.0;
  return vel.f - lg - vel.v.squaredNorm() / (2.0 * params.alpha);
}

double dual_merit_d_exact(const ConstrainedProblem& p, const Vector& x, double alpha, double eps_g) {
  if (!(alpha > 0.0)) throw ConfigError("dual_merit_d: alpha must be > 0");
  const ActiveModel model = assemble_model(p, x, eps_g);
  const KktEnumeration e = brute_force_velocity(model, eval_objective_grad(p, x), alpha);
  const double lg = e.lambda.size() ? e.lambda.dot(model.gbar) : 0.0;
  return eval_objective(p, x) - lg - e.v.squaredNorm() / (2.0 * alpha);
}

DBoundsReport d_bounds_check(const ConstrainedProblem& p, const Vector& x, const SolverParams& params, double L_l,
                             double rel_tol) {
  if (!p.meta.mu) throw ConfigError("d_bounds_check: problem declares no mu");
  const double mu = *p.meta.mu;
  const double alpha = params.alpha;
  if (!(alpha > 0.0 && alpha <= mu)) throw ConfigError("d_bounds_check: requires 0 < alpha <= mu");
  const ActiveModel model = assemble_model(p, x, params.eps_g);
  const KktEnumeration e = brute_force_velocity(model, eval_objective_grad(p, x), alpha);
  const ReferenceMinimum ref = reference_minimum(p, model.active);
  if (!ref.feasible) throw DegenerateModelError("d_bounds_check: reference problem on I_x is infeasible");

  DBoundsReport r;
  r.v_sq = e.v.squaredNorm();
  r.d = eval_objective(p, x) - (e.lambda.size() ? e.lambda.dot(model.gbar) : 0.0) - r.v_sq / (2.0 * alpha);
  r.f_star_I = ref.f;
  r.lower = ref.f - (L_l / (2.0 * alpha * alpha)) * (1.0 - alpha / L_l) * r.v_sq;
  r.upper = ref.f - (1.0 / (2.0 * alpha)) * (1.0 - alpha / mu) * r.v_sq;
  r.lower_gap = r.d - r.lower;
  r.upper_gap = r.upper - r.d;
  const double tol = rel_tol * (1.0 + std::abs(r.d));
  r.ok = r.lower_gap >= -tol && r.upper_gap >= -tol;
  return r;
}

DistanceBoundReport distance_bound_check(const ConstrainedProblem& p, const Vector& x, const SolverParams& params,
                                         double rel_tol) {
  if (!p.meta.mu) throw ConfigError("distance_bound_check: problem declares no mu");
  const double mu = *p.meta.mu;
  const double alpha = params.alpha;
  if (!(alpha > 0.0 && alpha <= mu)) throw ConfigError("distance_bound_check: requires 0 < alpha <= mu");
  const ActiveModel model = assemble_model(p, x, params.eps_g);
  const ReferenceMinimum ref_I = reference_minimum(p, model.active);
  const ReferenceMinimum ref = reference_minimum(p);
  if (!ref_I.feasible || !ref.feasible) throw DegenerateModelError("distance_bound_check: infeasible reference");

  DistanceBoundReport r;
  r.d = dual_merit_d_exact(p, x, alpha, params.eps_g);
  r.bound_I = ref_I.f - 0.5 * (mu - alpha) * (x - ref_I.x).squaredNorm();
  r.bound_full = ref.f - 0.5 * (mu - alpha) * (x - ref.x).squaredNorm();
  const double tol = rel_tol * (1.0 + std::abs(r.d));
  r.ok = r.d <= r.bound_I + tol && r.d <= r.bound_full + tol;
  return r;
}

RateConstants rate_constants(double mu, double L_l, double T, double alpha) {
  if (!(alpha > 0.0 && alpha < mu && mu <= L_l))
    throw ConfigError("rate_constants: requires 0 < alpha < mu <= L_l");
  if (!(T > 0.0 && T <= 2.0 / (L_l + mu) * (1.0 + 1e-12)))
    throw ConfigError("rate_constants: requires 0 < T <= 2/(L_l + mu)");
  RateConstants c;
  c.c1 = T * (mu / alpha - 1.0) * (1.0 - mu * T / 2.0);
  // L_l == alpha cannot happen here since alpha < mu <= L_l.
  c.c2 = 2.0 * alpha * (1.0 - mu * T / 2.0) * (mu - alpha) / (L_l - alpha);
  return c;
}

double multiplier_bound(double mu_g, double L_g, double g_at_max, double L, double dist_xf_xg, double alpha) {
  if (!(g_at_max > 0.0)) throw ConfigError("multiplier_bound: the maximizer of g must be strictly feasible");
  if (!(mu_g > 0.0)) throw ConfigError("multiplier_bound: mu_g must be > 0");
  return (alpha + L * (1.0 + dist_xf_xg * std::sqrt(L_g / (2.0 * g_at_max)))) / mu_g;
}

double trust_region_lagrangian_bound(double alpha, double L, double norm_Qinv_c) {
  return alpha + L * (2.0 + norm_Qinv_c * std::sqrt(2.0) / 2.0);
}

double GradientCheck::max() const { return std::max({objective, ineq, eq}); }

GradientCheck fd_gradient_check(const ConstrainedProblem& p, const Vector& x, double h) {
  const Eigen::Index n = p.dim;
  Vector fd_f(n);
  Matrix fd_g(n, p.n_ineq), fd_h(n, p.n_eq);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    fd_f[i] = (eval_objective(p, xp) - eval_objective(p, xm)) / (2.0 * h);
    if (p.n_ineq) fd_g.row(i) = ((eval_ineq(p, xp) - eval_ineq(p, xm)) / (2.0 * h)).transpose();
    if (p.n_eq) fd_h.row(i) = ((eval_eq(p, xp) - eval_eq(p, xm)) / (2.0 * h)).transpose();
  }
  auto rel = [](const Matrix& analytic, const Matrix& fd) {
    if (fd.size() == 0) return 0.0;
    return (analytic - fd).lpNorm<Eigen::Infinity>() / std::max(1.0, fd.lpNorm<Eigen::Infinity>());
  };
  GradientCheck c;
  c.objective = rel(eval_objective_grad(p, x), fd_f);
  if (p.n_ineq) c.ineq = rel(Matrix(eval_ineq_grad(p, x)), fd_g);
  if (p.n_eq) c.eq = rel(Matrix(eval_eq_grad(p, x)), fd_h);
  return c;
}

}  // namespace velokit
