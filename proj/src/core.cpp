#include "velokit/core.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace velokit {
namespace {

std::string describe(const Vector& x) {
  std::ostringstream os;
  os << "[";
  const Eigen::Index shown = std::min<Eigen::Index>(x.size(), 6);
  for (Eigen::Index i = 0; i < shown; ++i) os << (i ? ", " : "") << x[i];
  if (shown < x.size()) os << ", ...";
  os << "]";
  return os.str();
}

[[noreturn]] void evaluation_failure(const char* what, const Vector& x) {
  throw EvaluationError(std::string("evaluation failure at x = ") + describe(x) + " (" + what + ")");
}

void check_vector(const Vector& v, Eigen::Index expected, const char* what, const Vector& x) {
  if (v.size() != expected) {
    throw ConfigError(std::string(what) + " returned length " + std::to_string(v.size()) +
                      ", expected " + std::to_string(expected));
  }
  if (!v.allFinite()) evaluation_failure(what, x);
}

void check_jacobian(const SparseMatrix& J, Eigen::Index rows, Eigen::Index cols, const char* what,
                    const Vector& x) {
  if (J.rows() != rows || J.cols() != cols) {
    throw ConfigError(std::string(what) + " returned " + std::to_string(J.rows()) + "x" +
                      std::to_string(J.cols()) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  for (Eigen::Index k = 0; k < J.nonZeros(); ++k) {
    if (!std::isfinite(J.valuePtr()[k])) evaluation_failure(what, x);
  }
}

SparseMatrix compressed(SparseMatrix J) {
  J.makeCompressed();
  return J;
}

}  // namespace

double eval_objective(const ConstrainedProblem& p, const Vector& x) {
  if (x.size() != p.dim) throw ConfigError("point has length " + std::to_string(x.size()) +
                                           ", problem dimension is " + std::to_string(p.dim));
  if (!x.allFinite()) evaluation_failure("non-finite point", x);
  const double f = p.objective(x);
  if (!std::isfinite(f)) evaluation_failure("objective", x);
  return f;
}

Vector eval_objective_grad(const ConstrainedProblem& p, const Vector& x) {
  Vector g = p.objective_grad(x);
  check_vector(g, p.dim, "objective_grad", x);
  return g;
}

Vector eval_ineq(const ConstrainedProblem& p, const Vector& x) {
  if (p.n_ineq == 0) return Vector(0);
  Vector g = p.ineq(x);
  check_vector(g, p.n_ineq, "ineq", x);
  return g;
}

SparseMatrix eval_ineq_grad(const ConstrainedProblem& p, const Vector& x) {
  if (p.n_ineq == 0) return SparseMatrix(p.dim, 0);
  SparseMatrix J = compressed(p.ineq_grad(x));
  check_jacobian(J, p.dim, p.n_ineq, "ineq_grad", x);
  return J;
}

Vector eval_eq(const ConstrainedProblem& p, const Vector& x) {
  if (p.n_eq == 0) return Vector(0);
  Vector h = p.eq(x);
  check_vector(h, p.n_eq, "eq", x);
  return h;
}

SparseMatrix eval_eq_grad(const ConstrainedProblem& p, const Vector& x) {
  if (p.n_eq == 0) return SparseMatrix(p.dim, 0);
  SparseMatrix J = compressed(p.eq_grad(x));
  check_jacobian(J, p.dim, p.n_eq, "eq_grad", x);
  return J;
}

void QuadraticProgram::validate() const {
  const Eigen::Index n = c.size();
  if (n == 0) throw ConfigError("quadratic program: c must be non-empty");
  if (Q.rows() != n || Q.cols() != n) throw ConfigError("quadratic program: Q must be n x n");
  if (A_ineq.cols() != n && A_ineq.rows() != 0)
    throw ConfigError("quadratic program: A_ineq must have n columns");
  if (A_ineq.rows() != b_ineq.size())
    throw ConfigError("quadratic program: A_ineq and b_ineq row counts differ");
  if (A_eq.cols() != n && A_eq.rows() != 0)
    throw ConfigError("quadratic program: A_eq must have n columns");
  if (A_eq.rows() != b_eq.size())
    throw ConfigError("quadratic program: A_eq and b_eq row counts differ");
}

ConstrainedProblem QuadraticProgram::to_problem(ProblemMetadata meta) const {
  validate();
  const Eigen::Index n = c.size();
  ConstrainedProblem p;
  p.dim = static_cast<int>(n);
  p.n_ineq = static_cast<int>(b_ineq.size());
  p.n_eq = static_cast<int>(b_eq.size());

  // Shared immutable copies keep the closures cheap to copy and thread-safe.
  auto Qs = std::make_shared<const SparseMatrix>(Q);
  auto cs = std::make_shared<const Vector>(c);
  SparseMatrix Ai = A_ineq.rows() == 0 ? SparseMatrix(0, n) : A_ineq;
  SparseMatrix Ae = A_eq.rows() == 0 ? SparseMatrix(0, n) : A_eq;
  auto Ai_s = std::make_shared<const SparseMatrix>(Ai);
  auto bi_s = std::make_shared<const Vector>(b_ineq);
  auto Ai_t = std::make_shared<const SparseMatrix>(compressed(SparseMatrix(Ai.transpose())));
  auto Ae_s = std::make_shared<const SparseMatrix>(Ae);
  auto be_s = std::make_shared<const Vector>(b_eq);
  auto Ae_t = std::make_shared<const SparseMatrix>(compressed(SparseMatrix(Ae.transpose())));
  const double offset = f0;

  p.objective = [Qs, cs, offset](const Vector& x) {
    return 0.5 * x.dot(*Qs * x) + cs->dot(x) + offset;
  };
  p.objective_grad = [Qs, cs](const Vector& x) -> Vector { return *Qs * x + *cs; };
  p.ineq = [Ai_s, bi_s](const Vector& x) -> Vector { return *Ai_s * x + *bi_s; };
  p.ineq_grad = [Ai_t](const Vector&) { return *Ai_t; };
  p.eq = [Ae_s, be_s](const Vector& x) -> Vector { return *Ae_s * x + *be_s; };
  p.eq_grad = [Ae_t](const Vector&) { return *Ae_t; };

  p.meta = std::move(meta);
  p.meta.feasible_set_convex = true;
  return p;
}

void SolverParams::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("invalid parameter " + field + ": " + why);
  };
  if (!(T > 0.0) || !std::isfinite(T)) fail("T", "must be > 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) fail("alpha*T", "must be > 0");
  // Small slack so that alphaT given as exactly 1 survives the division by T.
  if (alpha * T > 1.0 + 1e-12) fail("alpha*T", "must satisfy 0 < alpha*T <= 1");
  if (!(eps_g >= 0.0)) fail("eps_g", "must be >= 0");
  if (!(omega > 0.0 && omega < 2.0)) fail("omega", "must lie in (0, 2)");
  if (!(tol > 0.0)) fail("TOL", "must be > 0");
  if (!(tol_prox > 0.0)) fail("TOL_PROX", "must be > 0");
  if (maxiter < 0) fail("MAXITER", "must be >= 0");
  if (maxiter_prox < 1) fail("MAXITER_PROX", "must be >= 1");
  if (side_threshold && !(*side_threshold >= 0.0)) fail("side_threshold", "must be >= 0");
  if (max_reuse_steps < 1) fail("max_reuse_steps", "must be >= 1");
}

std::vector<int> active_set_from_values(const Vector& g, double eps_g) {
  std::vector<int> idx;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) throw EvaluationError("evaluation failure at x (ineq)");
    if (g[i] <= eps_g) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

std::vector<int> active_set(const ConstrainedProblem& p, const Vector& x, double eps_g) {
  if (!(eps_g >= 0.0)) throw ConfigError("invalid parameter eps_g: must be >= 0");
  if (!x.allFinite()) throw EvaluationError("evaluation failure at x (non-finite point)");
  return active_set_from_values(eval_ineq(p, x), eps_g);
}

ActiveModel assemble_model(const Vector& h, const SparseMatrix& grad_h_in, const Vector& g,
                           const SparseMatrix& grad_g_in, double eps_g) {
  if (grad_h_in.cols() != h.size() || grad_g_in.cols() != g.size())
    throw ConfigError("constraint gradient column count does not match constraint count");
  const SparseMatrix grad_h = compressed(grad_h_in);
  const SparseMatrix grad_g = compressed(grad_g_in);
  ActiveModel m;
  m.active = active_set_from_values(g, eps_g);
  m.n_eq_cols = static_cast<int>(h.size());
  const Eigen::Index n = std::max(grad_h.rows(), grad_g.rows());
  const Eigen::Index cols = h.size() + static_cast<Eigen::Index>(m.active.size());

  Eigen::Index nnz = grad_h.nonZeros();
  for (int i : m.active) nnz += grad_g.outerIndexPtr()[i + 1] - grad_g.outerIndexPtr()[i];

  m.W.resize(n, cols);
  m.W.reserve(nnz);
  m.gbar.resize(cols);
  Eigen::Index j = 0;
  for (Eigen::Index e = 0; e < h.size(); ++e, ++j) {
    m.W.startVec(j);
    for (SparseMatrix::InnerIterator it(grad_h, e); it; ++it) m.W.insertBack(it.row(), j) = it.value();
    m.gbar[j] = h[e];
  }
  for (int i : m.active) {
    m.W.startVec(j);
    for (SparseMatrix::InnerIterator it(grad_g, i); it; ++it) m.W.insertBack(it.row(), j) = it.value();
    m.gbar[j] = g[i];
    ++j;
  }
  m.W.finalize();
  return m;
}

ActiveModel assemble_model(const ConstrainedProblem& p, const Vector& x, double eps_g) {
  if (!(eps_g >= 0.0)) throw ConfigError("invalid parameter eps_g: must be >= 0");
  const Vector h = eval_eq(p, x);
  const Vector g = eval_ineq(p, x);
  return assemble_model(h, eval_eq_grad(p, x), g, eval_ineq_grad(p, x), eps_g);
}

namespace {

// Minimum-norm point of the convex hull of the columns of P (Wolfe's method).
Vector min_norm_hull_point(const Matrix& P) {
  const Eigen::Index m = P.cols();
  const double scale = std::max(1.0, P.colwise().squaredNorm().maxCoeff());
  const double tol = 1e-12 * scale;

  std::vector<Eigen::Index> S;
  Eigen::Index first = 0;
  P.colwise().squaredNorm().minCoeff(&first);
  S.push_back(first);
  std::vector<double> w{1.0};
  Vector x = P.col(first);

  for (int outer = 0; outer < 50 * static_cast<int>(m) + 50; ++outer) {
    Eigen::Index j = 0;
    (P.transpose() * x).minCoeff(&j);
    if (x.squaredNorm() - x.dot(P.col(j)) <= tol) return x;
    if (std::find(S.begin(), S.end(), j) != S.end()) return x;
    S.push_back(j);
    w.push_back(0.0);

    for (int inner = 0; inner < 50 * static_cast<int>(m) + 50; ++inner) {
      const auto k = static_cast<Eigen::Index>(S.size());
      Matrix PS(P.rows(), k);
      for (Eigen::Index a = 0; a < k; ++a) PS.col(a) = P.col(S[static_cast<std::size_t>(a)]);
      // Affine minimizer over span(S): [PS'PS 1; 1' 0][u; t] = [0; 1].
      Matrix K = Matrix::Zero(k + 1, k + 1);
      K.topLeftCorner(k, k) = PS.transpose() * PS;
      K.topRightCorner(k, 1).setOnes();
      K.bottomLeftCorner(1, k).setOnes();
      Vector rhs = Vector::Zero(k + 1);
      rhs[k] = 1.0;
      const Vector u = K.completeOrthogonalDecomposition().solve(rhs).head(k);

      if ((u.array() > 1e-14).all()) {
        for (Eigen::Index a = 0; a < k; ++a) w[static_cast<std::size_t>(a)] = u[a];
        x = PS * u;
        break;
      }
      double theta = 1.0;
      for (Eigen::Index a = 0; a < k; ++a) {
        const double wa = w[static_cast<std::size_t>(a)];
        if (u[a] <= 1e-14 && wa - u[a] > 0.0) theta = std::min(theta, wa / (wa - u[a]));
      }
      for (Eigen::Index a = 0; a < k; ++a) {
        auto& wa = w[static_cast<std::size_t>(a)];
        wa = (1.0 - theta) * wa + theta * u[a];
      }
      std::vector<Eigen::Index> S2;
      std::vector<double> w2;
      for (std::size_t a = 0; a < S.size(); ++a) {
        if (w[a] > 1e-14) {
          S2.push_back(S[a]);
          w2.push_back(w[a]);
        }
      }
      if (S2.empty()) {
        S2.push_back(S.back());
        w2.push_back(1.0);
      }
      S = std::move(S2);
      w = std::move(w2);
      x.setZero();
      for (std::size_t a = 0; a < S.size(); ++a) x += w[a] * P.col(S[a]);
    }
  }
  return x;
}

}  // namespace

MfcqDiagnostic check_mfcq(const ActiveModel& model) {
  MfcqDiagnostic diag;
  const Matrix W = Matrix(model.W);
  const Eigen::Index n = W.rows();
  const Eigen::Index ne = model.n_eq_cols;
  const Eigen::Index ni = W.cols() - ne;

  Matrix P = W.rightCols(ni);
  if (ne > 0) {
    const Matrix H = W.leftCols(ne);
    Eigen::JacobiSVD<Matrix> svd(H);
    const Vector sv = svd.singularValues();
    const double smax = sv.size() ? sv.maxCoeff() : 0.0;
    const double smin = ne > n ? 0.0 : (sv.size() ? sv.minCoeff() : 0.0);
    diag.equality_sv_ratio = smax > 0.0 ? smin / smax : 0.0;
    if (smax <= 0.0 || smin < 1e-10 * smax) {
      diag.ok = false;
      diag.message = "equality constraint gradients are numerically rank-deficient";
      return diag;
    }
    if (ni > 0) {
      // Restrict inequality normals to directions that keep h fixed to first order.
      Eigen::HouseholderQR<Matrix> qr(H);
      const Matrix Qthin = qr.householderQ() * Matrix::Identity(n, ne);
      P -= Qthin * (Qthin.transpose() * P);
    }
  }
  if (ni == 0) {
    diag.message = "ok";
    return diag;
  }
  // A direction w with P'w > 0 exists iff 0 is not in the convex hull of P's columns.
  const double scale = std::sqrt(W.rightCols(ni).colwise().squaredNorm().maxCoeff());
  diag.hull_distance = min_norm_hull_point(P).norm();
  if (scale == 0.0 || diag.hull_distance <= 1e-8 * scale) {
    diag.ok = false;
    diag.message = "no direction strictly increases all active inequality constraints";
    return diag;
  }
  diag.message = "ok";
  return diag;
}

}  // namespace velokit
