#pragma once

// Multiplier computation for the velocity projection
//
//   min_v 1/2 |v + grad f|^2   s.t.  W_eq' v + alpha gbar_eq = 0,
//                                      W_in' v + alpha gbar_in >= 0,
//
// solved through its dual  min_{lambda in cone} 1/2 lambda'G lambda + q'lambda
// with G = W'W and q = -W' grad f + alpha gbar, by a projected SOR sweep.
// The cone leaves the first n_eq_cols entries free and clamps the rest at 0.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>

#include "velokit/core.hpp"

namespace velokit {

/// Cone projection: identity on the first n_eq entries, max(., 0) on the rest.
template <class Derived>
VectorT<typename Derived::Scalar> prox_cone(const Eigen::MatrixBase<Derived>& xi, Eigen::Index n_eq) {
  using Scalar = typename Derived::Scalar;
  VectorT<Scalar> out = xi;
  if (n_eq < 0 || n_eq > out.size()) throw ConfigError("prox_cone: n_eq out of range");
  for (Eigen::Index i = n_eq; i < out.size(); ++i) out[i] = std::max(out[i], Scalar(0));
  return out;
}

template <class Scalar>
struct BasicDualResult {
  VectorT<Scalar> lambda;
  int iterations = 0;
  Scalar last_delta = 0;
  Scalar stationarity_residual = 0;
  Scalar complementarity_residual = 0;
  Scalar merit = 0;  // 1/2 lambda'G lambda + q'lambda at the returned lambda
  bool converged = false;
};

using DualResult = BasicDualResult<double>;

/// Matrix-free prox-SOR on one active model. Keeps u = W lambda up to date so a
/// sweep costs O(nnz(W)); W'W is never formed.
template <class Scalar>
class ProxSor {
 public:
  using Vec = VectorT<Scalar>;

  ProxSor(const BasicActiveModel<Scalar>& model, const Vec& grad_f, Scalar alpha, Scalar omega)
      : model_(model), omega_(omega) {
    const Eigen::Index m = model.size();
    if (grad_f.size() != model.dim()) throw ConfigError("dual: gradient length does not match model");
    if (model.gbar.size() != m) throw ConfigError("dual: gbar length does not match model");
    Wt_grad_ = model.W.transpose() * grad_f;
    q_ = -Wt_grad_ + alpha * model.gbar;
    diag_.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      diag_[j] = model.W.col(j).squaredNorm();
      if (!(diag_[j] > Scalar(1e-14))) {
        const int id = model.constraint_id(j);
        const std::string which = model.is_equality(j)
                                      ? "equality " + std::to_string(id)
                                      : "inequality " + std::to_string(id - model.n_eq_cols);
        throw DegenerateConstraintError("degenerate constraint gradient: " + which +
                                        " has |grad|^2 <= 1e-14");
      }
    }
    u_ = Vec::Zero(model.dim());
  }

  const Vec& q() const { return q_; }
  const Vec& diagonal() const { return diag_; }
  /// W' grad f, needed by the side condition.
  const Vec& Wt_grad() const { return Wt_grad_; }

  /// Synchronize the cached W lambda with lambda.
  void reset(const Vec& lambda) { u_ = model_.W * lambda; }

  /// One ordered in-place sweep; returns |lambda_new - lambda_old|.
  Scalar sweep(Vec& lambda) {
    Scalar delta_sq = 0;
    const Eigen::Index m = lambda.size();
    for (Eigen::Index j = 0; j < m; ++j) {
      Scalar wu = 0;
      for (typename SparseMatrixT<Scalar>::InnerIterator it(model_.W, j); it; ++it)
        wu += it.value() * u_[it.row()];
      const Scalar r = wu + q_[j];
      Scalar next = lambda[j] - omega_ * r / diag_[j];
      if (j >= model_.n_eq_cols) next = std::max(next, Scalar(0));
      const Scalar d = next - lambda[j];
      if (d != Scalar(0)) {
        for (typename SparseMatrixT<Scalar>::InnerIterator it(model_.W, j); it; ++it)
          u_[it.row()] += d * it.value();
        lambda[j] = next;
        delta_sq += d * d;
      }
    }
    return std::sqrt(delta_sq);
  }

  /// G lambda + q, from a fresh product (not the cached one).
  Vec residual(const Vec& lambda) const {
    return model_.W.transpose() * (model_.W * lambda) + q_;
  }

  Scalar merit(const Vec& lambda) const {
    const Vec Wl = model_.W * lambda;
    return Scalar(0.5) * Wl.squaredNorm() + q_.dot(lambda);
  }

 private:
  const BasicActiveModel<Scalar>& model_;
  Scalar omega_;
  Vec Wt_grad_;
  Vec q_;
  Vec diag_;
  Vec u_;
};

/// Residual summaries of a multiplier for G lambda + q with cone constraints.
template <class Scalar>
void dual_residuals(const VectorT<Scalar>& lambda, const VectorT<Scalar>& r, Eigen::Index n_eq,
                    Scalar& stationarity, Scalar& complementarity) {
  stationarity = 0;
  complementarity = 0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (i < n_eq) {
      stationarity = std::max(stationarity, std::abs(r[i]));
    } else {
      stationarity = std::max(stationarity, std::max(Scalar(0), -r[i]));
      complementarity = std::max(complementarity, std::abs(lambda[i] * r[i]));
    }
  }
}

/// Single sweep from lambda (updated in place); returns the same lambda.
template <class Scalar>
VectorT<Scalar> sor_sweep(const BasicActiveModel<Scalar>& model, const VectorT<Scalar>& grad_f,
                          Scalar alpha, Scalar omega, VectorT<Scalar>& lambda) {
  if (lambda.size() != model.size()) throw ConfigError("sor_sweep: lambda length does not match model");
  ProxSor<Scalar> sor(model, grad_f, alpha, omega);
  sor.reset(lambda);
  sor.sweep(lambda);
  return lambda;
}

/// Projects a warm start onto the cone, padding or truncating with zeros.
template <class Scalar>
VectorT<Scalar> sanitize_warm_start(const VectorT<Scalar>& warm, const BasicActiveModel<Scalar>& model) {
  VectorT<Scalar> lambda = VectorT<Scalar>::Zero(model.size());
  const Eigen::Index k = std::min(warm.size(), lambda.size());
  lambda.head(k) = warm.head(k);
  return prox_cone(lambda, model.n_eq_cols);
}

/// Carries multipliers across a change of active set, matched by constraint id.
/// Constraints absent from `from` start at zero.
template <class Scalar>
VectorT<Scalar> remap_multipliers(const BasicActiveModel<Scalar>& from, const VectorT<Scalar>& lambda,
                                  const BasicActiveModel<Scalar>& to) {
  std::unordered_map<int, Scalar> by_id;
  for (Eigen::Index j = 0; j < lambda.size() && j < from.size(); ++j) by_id[from.constraint_id(j)] = lambda[j];
  VectorT<Scalar> out = VectorT<Scalar>::Zero(to.size());
  for (Eigen::Index j = 0; j < to.size(); ++j) {
    if (auto it = by_id.find(to.constraint_id(j)); it != by_id.end()) out[j] = it->second;
  }
  return prox_cone(out, to.n_eq_cols);
}

/// Iterates prox-SOR sweeps until |delta lambda| <= tol_prox and, for every
/// inequality with lambda_i > 0, (G lambda + q)_i <= side threshold; or until
/// maxiter_prox sweeps. The last iterate is returned either way.
template <class Scalar>
BasicDualResult<Scalar> solve_dual(const BasicActiveModel<Scalar>& model, const VectorT<Scalar>& grad_f,
                                   const SolverParams& params,
                                   const std::optional<VectorT<Scalar>>& warm = std::nullopt) {
  BasicDualResult<Scalar> res;
  const Eigen::Index m = model.size();
  if (m == 0) {
    res.lambda = VectorT<Scalar>(0);
    res.converged = true;
    return res;
  }
  const auto alpha = static_cast<Scalar>(params.alpha);
  const auto tol = static_cast<Scalar>(params.tol_prox);
  const auto side = static_cast<Scalar>(params.stop_threshold());

  ProxSor<Scalar> sor(model, grad_f, alpha, static_cast<Scalar>(params.omega));
  res.lambda = warm ? sanitize_warm_start(*warm, model) : VectorT<Scalar>::Zero(m);
  sor.reset(res.lambda);

  VectorT<Scalar> r;
  for (int j = 0; j < params.maxiter_prox; ++j) {
    res.last_delta = sor.sweep(res.lambda);
    res.iterations = j + 1;
    if (res.last_delta > tol) continue;
    r = sor.residual(res.lambda);
    bool side_ok = true;
    for (Eigen::Index i = model.n_eq_cols; i < m && side_ok; ++i) {
      if (res.lambda[i] > Scalar(0) && r[i] > side) side_ok = false;
    }
    if (side_ok) {
      res.converged = true;
      break;
    }
    // Re-synchronize the cached product to stop round-off drift from masking convergence.
    sor.reset(res.lambda);
  }
  if (r.size() != m || !res.converged) r = sor.residual(res.lambda);
  dual_residuals(res.lambda, r, model.n_eq_cols, res.stationarity_residual, res.complementarity_residual);
  res.merit = sor.merit(res.lambda);
  return res;
}

}  // namespace velokit
