#include <catch_amalgamated.hpp>

#include <random>

#include "support.hpp"
#include "velokit/dual.hpp"
#include "velokit/oracle.hpp"

using namespace velokit;
using velokit::testing::fixture_problem;
using velokit::testing::make_model;
using velokit::testing::random_dual_instance;
using velokit::testing::vec;

namespace {

SolverParams tight_params(double alpha, double omega = 1.0) {
  SolverParams p;
  p.T = 1.0;
  p.alpha = alpha;
  p.omega = omega;
  p.tol_prox = 1e-13;
  p.side_threshold = 1e-12;
  p.maxiter_prox = 100000;
  return p;
}

}  // namespace

TEST_CASE("cone projection", "[dual]") {
  CHECK(prox_cone(vec({-1.0, -1.0}), 2) == vec({-1.0, -1.0}));
  CHECK(prox_cone(vec({-1.0, -1.0}), 0) == vec({0.0, 0.0}));
  CHECK(prox_cone(vec({0.5, -0.2, 0.3}), 1) == vec({0.5, 0.0, 0.3}));
  CHECK_THROWS_AS(prox_cone(vec({1.0}), 2), ConfigError);
}

TEST_CASE("single sweep on the fixture", "[dual]") {
  const ConstrainedProblem p = fixture_problem();
  {
    const ActiveModel m = assemble_model(p, vec({-0.5}), 1e-6);
    Vector lambda = Vector::Zero(1);
    sor_sweep(m, eval_objective_grad(p, vec({-0.5})), 0.1, 1.0, lambda);
    CHECK(lambda[0] == Catch::Approx(0.15).epsilon(1e-14));
  }
  {
    const ActiveModel m = assemble_model(p, vec({2.0}), 1e-6);
    REQUIRE(m.active == std::vector<int>{1});
    Vector lambda = Vector::Zero(1);
    sor_sweep(m, eval_objective_grad(p, vec({2.0})), 0.1, 1.0, lambda);
    CHECK(lambda[0] == 0.0);
  }
}

TEST_CASE("dual solve on the fixture and on an empty model", "[dual]") {
  const ConstrainedProblem p = fixture_problem();
  SolverParams params;
  params.T = 1.0;
  params.alpha = 0.1;
  const ActiveModel m = assemble_model(p, vec({-0.5}), params.eps_g);
  const DualResult r = solve_dual(m, eval_objective_grad(p, vec({-0.5})), params);
  CHECK(r.converged);
  CHECK(r.iterations <= 2);
  CHECK(r.lambda[0] == Catch::Approx(0.15).epsilon(1e-12));

  const ActiveModel e = assemble_model(p, vec({1.0}), params.eps_g);
  const DualResult re = solve_dual(e, eval_objective_grad(p, vec({1.0})), params);
  CHECK(re.converged);
  CHECK(re.iterations == 0);
  CHECK(re.lambda.size() == 0);
}

TEST_CASE("a stationary multiplier is a fixed point of the sweep", "[dual]") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto inst = random_dual_instance(rng, 6, 1, 3);
    const DualResult r = solve_dual(inst.model, inst.grad_f, tight_params(0.3));
    REQUIRE(r.converged);
    Vector again = r.lambda;
    sor_sweep(inst.model, inst.grad_f, 0.3, 1.0, again);
    CHECK((again - r.lambda).norm() <= 1e-10 * (1.0 + r.lambda.norm()));
  }
}

TEST_CASE("degenerate constraint gradient is reported", "[dual]") {
  Matrix W(2, 2);
  W << 1.0, 0.0, 0.0, 0.0;
  ActiveModel m = make_model(W, vec({0.0, 0.0}), 0);
  m.active = {3, 7};
  try {
    solve_dual(m, vec({1.0, 1.0}), tight_params(0.1));
    FAIL("expected DegenerateConstraintError");
  } catch (const DegenerateConstraintError& e) {
    CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("degenerate constraint gradient"));
    CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("inequality 7"));
  }
}

TEST_CASE("merit decreases and the cone holds after every sweep", "[dual][property]") {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 30; ++t) {
    const int n = 3 + t % 5;
    const auto inst = random_dual_instance(rng, n, t % 2, 2 + t % 4);
    for (double omega : {0.5, 1.0, 1.5}) {
      ProxSor<double> sor(inst.model, inst.grad_f, 0.2, omega);
      Vector lambda = Vector::Zero(inst.model.size());
      sor.reset(lambda);
      double prev = sor.merit(lambda);
      for (int j = 0; j < 200; ++j) {
        sor.sweep(lambda);
        const double cur = sor.merit(lambda);
        CHECK(cur <= prev + 1e-12 * (1.0 + std::abs(prev)));
        for (Eigen::Index i = inst.model.n_eq_cols; i < lambda.size(); ++i) CHECK(lambda[i] >= 0.0);
        prev = cur;
      }
    }
  }
}

TEST_CASE("stationarity and complementarity at convergence", "[dual][property]") {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 40; ++t) {
    const auto inst = random_dual_instance(rng, 8, t % 3, 1 + t % 5);
    SolverParams params = tight_params(0.25);
    params.tol_prox = 1e-10;
    const DualResult r = solve_dual(inst.model, inst.grad_f, params);
    REQUIRE(r.converged);
    const ProxSor<double> sor(inst.model, inst.grad_f, 0.25, 1.0);
    const Vector res = sor.residual(r.lambda);
    const double tol = 1e-6 * (1.0 + r.lambda.norm());
    for (Eigen::Index i = 0; i < res.size(); ++i) {
      if (inst.model.is_equality(i)) {
        CHECK(std::abs(res[i]) <= tol);
      } else {
        CHECK(res[i] >= -tol);
        CHECK(std::abs(r.lambda[i] * res[i]) <= tol);
      }
    }
    CHECK(r.stationarity_residual <= tol);
    CHECK(r.complementarity_residual <= tol);
  }
}

TEST_CASE("dual solve agrees with pattern enumeration", "[dual][oracle]") {
  std::mt19937_64 rng(29);
  SECTION("random 5x3 models") {
    for (int t = 0; t < 20; ++t) {
      const auto inst = random_dual_instance(rng, 5, 0, 3);
      const DualResult r = solve_dual(inst.model, inst.grad_f, tight_params(0.5));
      REQUIRE(r.converged);
      CHECK((r.lambda - enumeration_multiplier(inst.model, inst.grad_f, 0.5)).norm() <= 1e-8);
    }
  }
  SECTION("mixed models with up to 12 multipliers") {
    for (int t = 0; t < 30; ++t) {
      const int n_eq = t % 3, n_in = 2 + t % 10;
      const auto inst = random_dual_instance(rng, n_eq + n_in + 1, n_eq, n_in);
      const DualResult r = solve_dual(inst.model, inst.grad_f, tight_params(0.4, 1.2));
      REQUIRE(r.converged);
      CHECK((r.lambda - enumeration_multiplier(inst.model, inst.grad_f, 0.4)).norm() <= 1e-6);
    }
  }
}

TEST_CASE("warm starts are projected and remapped by constraint id", "[dual]") {
  Matrix W = Matrix::Identity(3, 3);
  ActiveModel from = make_model(W, vec({0.0, 0.0, 0.0}), 1);
  from.active = {2, 5};
  ActiveModel to = make_model(W, vec({0.0, 0.0, 0.0}), 1);
  to.active = {5, 6};
  const Vector mapped = remap_multipliers(from, vec({-0.3, 0.7, 0.9}), to);
  CHECK(mapped == vec({-0.3, 0.9, 0.0}));

  const Vector s = sanitize_warm_start(vec({-1.0, -2.0}), to);
  CHECK(s == vec({-1.0, 0.0, 0.0}));

  // A warm start at the solution converges in one sweep.
  std::mt19937_64 rng(31);
  const auto inst = random_dual_instance(rng, 6, 1, 3);
  const DualResult cold = solve_dual(inst.model, inst.grad_f, tight_params(0.3));
  const DualResult warm = solve_dual(inst.model, inst.grad_f, tight_params(0.3), std::optional<Vector>(cold.lambda));
  CHECK(warm.iterations <= 2);
  CHECK((warm.lambda - cold.lambda).norm() <= 1e-10);
}

TEST_CASE("inner cap reached leaves the result flagged", "[dual]") {
  std::mt19937_64 rng(37);
  const auto inst = random_dual_instance(rng, 10, 2, 6);
  SolverParams p = tight_params(0.3, 0.1);
  p.maxiter_prox = 2;
  const DualResult r = solve_dual(inst.model, inst.grad_f, p);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 2);
  for (Eigen::Index i = inst.model.n_eq_cols; i < r.lambda.size(); ++i) CHECK(r.lambda[i] >= 0.0);
}

TEST_CASE("the dual solver instantiates for float", "[dual]") {
  BasicActiveModel<float> m;
  m.W = SparseMatrixT<float>(1, 1);
  m.W.insert(0, 0) = 1.0f;
  m.gbar = VectorT<float>::Constant(1, -0.5f);
  m.active = {0};
  SolverParams p;
  p.T = 1.0;
  p.alpha = 0.1;
  const VectorT<float> grad = VectorT<float>::Constant(1, 0.1f);
  const auto r = solve_dual(m, grad, p);
  CHECK(r.converged);
  CHECK(r.lambda[0] == Catch::Approx(0.15f).epsilon(1e-6));
}
