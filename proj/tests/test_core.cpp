#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "support.hpp"
#include "velokit/core.hpp"
#include "velokit/problems.hpp"

using namespace velokit;
using velokit::testing::fixture_problem;
using velokit::testing::make_model;
using velokit::testing::vec;

TEST_CASE("active set on the fixture", "[core]") {
  const ConstrainedProblem p = fixture_problem();
  CHECK(active_set(p, vec({1.0}), 1e-6).empty());
  CHECK(active_set(p, vec({-0.5}), 1e-6) == std::vector<int>{0});
  CHECK(active_set(p, vec({2.0}), 1e-6) == std::vector<int>{1});
}

TEST_CASE("ties at eps_g are active", "[core]") {
  CHECK(active_set_from_values(vec({1e-3, 2e-3, -1.0}), 1e-3) == std::vector<int>{0, 2});
  CHECK(active_set_from_values(vec({0.0, 1e-300}), 0.0) == std::vector<int>{0});
}

TEST_CASE("non-finite constraint values are evaluation failures", "[core]") {
  ConstrainedProblem p = fixture_problem();
  p.ineq = [](const Vector& x) { return vec({std::numeric_limits<double>::quiet_NaN(), 2.0 - x[0]}); };
  try {
    active_set(p, vec({0.0}), 1e-6);
    FAIL("expected EvaluationError");
  } catch (const EvaluationError& e) {
    CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("evaluation failure at x"));
  }
}

TEST_CASE("model assembly on the fixture", "[core]") {
  const ConstrainedProblem p = fixture_problem();
  const ActiveModel m = assemble_model(p, vec({-0.5}), 1e-6);
  REQUIRE(m.size() == 1);
  CHECK(m.dim() == 1);
  CHECK(Matrix(m.W)(0, 0) == 1.0);
  CHECK(m.gbar[0] == -0.5);
  CHECK(m.n_eq_cols == 0);
  CHECK(m.active == std::vector<int>{0});

  const ActiveModel empty = assemble_model(p, vec({1.0}), 1e-6);
  CHECK(empty.size() == 0);
  CHECK(empty.gbar.size() == 0);
  CHECK(empty.W.rows() == 1);
}

TEST_CASE("model assembly with an equality", "[core]") {
  // f = |x|^2/2, h = x1 + x2 - 1.
  QuadraticProgram qp;
  qp.Q = velokit::testing::sparse_from(Matrix::Identity(2, 2));
  qp.c = Vector::Zero(2);
  qp.A_ineq.resize(0, 2);
  qp.b_ineq.resize(0);
  qp.A_eq = velokit::testing::sparse_from(Matrix::Ones(1, 2));
  qp.b_eq = vec({-1.0});
  const ConstrainedProblem p = qp.to_problem();
  const ActiveModel m = assemble_model(p, Vector::Zero(2), 1e-6);
  REQUIRE(m.size() == 1);
  CHECK(Matrix(m.W).col(0) == Vector::Ones(2));
  CHECK(m.gbar[0] == -1.0);
  CHECK(m.n_eq_cols == 1);
  CHECK(m.is_equality(0));
  CHECK(m.constraint_id(0) == 0);
}

TEST_CASE("gradient shape mismatch is a configuration error", "[core]") {
  ConstrainedProblem p = fixture_problem();
  p.ineq_grad = [](const Vector&) { return SparseMatrix(2, 2); };
  CHECK_THROWS_AS(assemble_model(p, vec({-0.5}), 1e-6), ConfigError);
}

TEST_CASE("MFCQ diagnostic", "[core]") {
  Matrix one(2, 1);
  one << 1.0, 1.0;
  CHECK(check_mfcq(make_model(one, vec({0.0}), 1)).ok);

  Matrix dup(2, 2);
  dup << 1.0, 1.0, 0.0, 0.0;
  const MfcqDiagnostic d = check_mfcq(make_model(dup, vec({0.0, 0.0}), 2));
  CHECK_FALSE(d.ok);
  CHECK(d.equality_sv_ratio < 1e-10);

  Matrix opp(2, 2);
  opp << 1.0, -1.0, 0.0, 0.0;
  CHECK_FALSE(check_mfcq(make_model(opp, vec({0.0, 0.0}), 0)).ok);

  Matrix fan(2, 2);
  fan << 1.0, 0.0, 0.0, 1.0;
  CHECK(check_mfcq(make_model(fan, vec({0.0, 0.0}), 0)).ok);
}

TEST_CASE("active indices respect eps_g and the model has matching shape", "[core][property]") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int n : {4, 8, 16}) {
    const ConstrainedProblem p = gen_random_qp(n, static_cast<std::uint64_t>(n));
    for (int s = 0; s < 10; ++s) {
      Vector x(n);
      for (int i = 0; i < n; ++i) x[i] = nd(rng);
      const Vector g = eval_ineq(p, x);
      for (double eps : {0.0, 1e-6, 0.5}) {
        const std::vector<int> I = active_set(p, x, eps);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
          const bool in = std::find(I.begin(), I.end(), static_cast<int>(i)) != I.end();
          CHECK(in == (g[i] <= eps));
        }
        CHECK(std::is_sorted(I.begin(), I.end()));
        const ActiveModel m = assemble_model(p, x, eps);
        CHECK(m.gbar.size() == p.n_eq + static_cast<Eigen::Index>(I.size()));
        CHECK(m.W.cols() == m.gbar.size());
        CHECK(m.active == I);
        for (std::size_t a = 0; a < I.size(); ++a) CHECK(m.gbar[p.n_eq + static_cast<Eigen::Index>(a)] == g[I[a]]);
      }
    }
  }
}

TEST_CASE("parameter validation names the field", "[core]") {
  SolverParams ok;
  ok.T = 5.0;
  ok.alpha = 0.08;
  CHECK_NOTHROW(ok.validate());

  auto message = [](SolverParams p) {
    try {
      p.validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  SolverParams bad = ok;
  bad.alpha = 1.5 / bad.T;
  CHECK_THAT(message(bad), Catch::Matchers::ContainsSubstring("alpha*T"));
  bad = ok;
  bad.T = -1.0;
  CHECK_THAT(message(bad), Catch::Matchers::ContainsSubstring("T"));
  bad = ok;
  bad.omega = 2.0;
  CHECK_THAT(message(bad), Catch::Matchers::ContainsSubstring("omega"));
  bad = ok;
  bad.eps_g = -1e-3;
  CHECK_THAT(message(bad), Catch::Matchers::ContainsSubstring("eps_g"));
  bad = ok;
  bad.tol_prox = 0.0;
  CHECK_THAT(message(bad), Catch::Matchers::ContainsSubstring("TOL_PROX"));
  bad = ok;
  bad.maxiter = -1;
  CHECK_THAT(message(bad), Catch::Matchers::ContainsSubstring("MAXITER"));

  // alpha*T = 1 exactly survives the product.
  SolverParams edge = ok;
  edge.T = 3.0;
  edge.alpha = 1.0 / 3.0;
  CHECK_NOTHROW(edge.validate());
}

TEST_CASE("stop threshold defaults to eps_g*alpha/2", "[core]") {
  SolverParams p;
  p.eps_g = 1e-6;
  p.alpha = 0.1;
  CHECK(p.stop_threshold() == Catch::Approx(5e-8));
  p.side_threshold = 1e-12;
  CHECK(p.stop_threshold() == 1e-12);
}
