#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <utility>
#include <sstream>

#include "support.hpp"
#include "velokit/oracle.hpp"
#include "velokit/problems.hpp"
#include "velokit/solver.hpp"

using namespace velokit;
using velokit::testing::fixture_problem;
using velokit::testing::sparse_from;
using velokit::testing::vec;

namespace {

SolverParams fixture_params(double alpha_T = 0.4) {
  SolverParams p;
  p.T = 5.0;
  p.alpha = alpha_T / p.T;
  p.eps_g = 1e-6;
  p.tol = 1e-6;
  return p;
}

// f = |x|^2/2, h = x1 + x2 - 1.
ConstrainedProblem plane_problem() {
  QuadraticProgram qp;
  qp.Q = sparse_from(Matrix::Identity(2, 2));
  qp.c = Vector::Zero(2);
  qp.A_ineq.resize(0, 2);
  qp.b_ineq.resize(0);
  qp.A_eq = sparse_from(Matrix::Ones(1, 2));
  qp.b_eq = vec({-1.0});
  ProblemMetadata meta;
  meta.L = meta.mu = meta.L_l = 1.0;
  meta.objective_convex = true;
  return qp.to_problem(meta);
}

QuadraticProgram unconstrained_qp(const Vector& diag, const Vector& c) {
  QuadraticProgram qp;
  qp.Q = sparse_from(Matrix(diag.asDiagonal()));
  qp.c = c;
  qp.A_ineq.resize(0, c.size());
  qp.b_ineq.resize(0);
  qp.A_eq.resize(0, c.size());
  qp.b_eq.resize(0);
  return qp;
}

}  // namespace

TEST_CASE("velocity on the fixture", "[solver]") {
  const ConstrainedProblem p = fixture_problem();
  SolverParams params = fixture_params();
  CHECK(velocity(p, vec({1.0}), params).v[0] == Catch::Approx(-0.4).epsilon(1e-14));

  params.alpha = 0.1;
  params.T = 1.0;
  const VelocityResult at = velocity(p, vec({-0.5}), params);
  CHECK(at.v[0] == Catch::Approx(0.05).epsilon(1e-12));
  CHECK(std::abs(1.0 * at.v[0] + params.alpha * (-0.5)) <= 1e-12);

  for (double alpha : {0.01, 0.1, 0.5}) {
    params.alpha = alpha;
    const VelocityResult r = velocity(p, vec({2.0}), params);
    CHECK(r.v[0] == Catch::Approx(-0.6).epsilon(1e-14));
    CHECK(r.dual.lambda[0] == 0.0);
  }
}

TEST_CASE("one step on the fixture and at a KKT point", "[solver]") {
  const ConstrainedProblem p = fixture_problem();
  const StepResult s = step(p, vec({0.5}), fixture_params());
  CHECK(s.vel.v[0] == Catch::Approx(-0.3).epsilon(1e-14));
  CHECK(s.x_next[0] == Catch::Approx(-1.0).epsilon(1e-14));

  SolverParams kkt = fixture_params();
  kkt.eps_g = 0.0;
  kkt.side_threshold = 1e-14;
  const StepResult fixed = step(p, vec({0.0}), kkt);
  CHECK(std::abs(fixed.vel.v[0]) <= 1e-15);
  CHECK(std::abs(fixed.x_next[0]) <= 1e-14);
}

TEST_CASE("affine equality contracts by 1 - alpha*T in one step", "[solver]") {
  const ConstrainedProblem p = plane_problem();
  for (double T : {0.1, 0.5, 1.0}) {
    for (double aT : {0.1, 0.4, 1.0}) {
      SolverParams params;
      params.T = T;
      params.alpha = aT / T;
      params.tol_prox = 1e-14;
      const StepResult s = step(p, Vector::Zero(2), params);
      CHECK(eval_eq(p, s.x_next)[0] == Catch::Approx((1.0 - aT) * -1.0).margin(1e-14));
    }
  }
}

TEST_CASE("fixture run crosses the origin once", "[solver]") {
  const ConstrainedProblem p = fixture_problem();
  SolveOptions opts;
  opts.record_trace = true;
  const SolveResult r = solve(p, vec({1.5}), fixture_params(), opts);
  REQUIRE(r.status == SolveStatus::converged);
  CHECK(std::abs(r.x_final[0]) <= 1e-4);
  CHECK(r.kkt_residual <= 1e-6);
  int down = 0, up = 0;
  const auto& recs = r.trace->records;
  for (std::size_t k = 0; k + 1 < recs.size(); ++k) {
    if (recs[k].x[0] > 0.0 && recs[k + 1].x[0] < 0.0) ++down;
    if (recs[k].x[0] < 0.0 && recs[k + 1].x[0] > 0.0) ++up;
  }
  CHECK(down == 1);
  CHECK(up == 0);
  CHECK(recs.size() == static_cast<std::size_t>(r.iterations) + 1);
  CHECK(recs.back().step_norm <= 5.0 * 1e-6);
  for (std::size_t k = 0; k < recs.size(); ++k) CHECK(recs[k].k == static_cast<int>(k));
}

TEST_CASE("without constraints the iterates are plain gradient descent", "[solver]") {
  const QuadraticProgram qp = unconstrained_qp(vec({0.3, 1.0, 2.0}), vec({1.0, -2.0, 0.5}));
  const ConstrainedProblem p = qp.to_problem();
  SolverParams params;
  params.T = 0.6;
  params.alpha = 1.0;
  params.maxiter = 30;
  SolveOptions opts;
  opts.record_trace = true;
  const SolveResult r = solve(p, vec({4.0, 4.0, -4.0}), params, opts);
  const auto& recs = r.trace->records;
  Vector x = vec({4.0, 4.0, -4.0});
  for (const auto& rec : recs) {
    CHECK(rec.x == x);
    x = x - params.T * Vector(qp.Q * x + qp.c);
  }
}

TEST_CASE("terminal point matches the reference minimum on random QPs", "[solver][oracle]") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const QuadraticProgram qp = random_qp_data(20, seed);
    const ConstrainedProblem p = gen_random_qp(20, seed);
    const SolverParams params = family_params(Family::random_qp, p);
    const SolveResult r = solve(p, p.x0, params);
    REQUIRE(r.status == SolveStatus::converged);
    const ReferenceMinimum ref = reference_minimum(qp);
    REQUIRE(ref.feasible);
    CHECK((r.x_final - ref.x).norm() <= 1e-4);
    CHECK(r.complementarity <= 10.0 * params.tol);
  }
}

TEST_CASE("evaluation failure returns the last good iterate", "[solver]") {
  ConstrainedProblem p = fixture_problem();
  auto f = p.objective;
  p.objective = [f](const Vector& x) { return x[0] < 0.4 ? std::nan("") : f(x); };
  SolverParams params = fixture_params(0.1);
  params.T = 1.0;
  params.alpha = 0.1;
  const SolveResult r = solve(p, vec({1.5}), params);
  CHECK(r.status == SolveStatus::error);
  CHECK(r.x_final[0] >= 0.4);
  CHECK_THAT(r.message, Catch::Matchers::ContainsSubstring("evaluation failure"));
}

TEST_CASE("maxiter status and the tie rule", "[solver]") {
  const ConstrainedProblem p = fixture_problem();
  SolverParams params = fixture_params();
  params.maxiter = 3;
  const SolveResult capped = solve(p, vec({1.5}), params);
  CHECK(capped.status == SolveStatus::maxiter);
  CHECK(capped.iterations == 3);

  params.maxiter = 1000;
  const SolveResult full = solve(p, vec({1.5}), params);
  params.maxiter = full.iterations;
  const SolveResult tie = solve(p, vec({1.5}), params);
  CHECK(tie.status == SolveStatus::converged);
  CHECK(tie.iterations == full.iterations);
}

TEST_CASE("line search on a quadratic hits the closed-form step", "[solver]") {
  const Vector diag = vec({0.1, 0.4, 1.0});
  const QuadraticProgram qp = unconstrained_qp(diag, vec({1.0, -1.0, 0.5}));
  const ConstrainedProblem p = qp.to_problem();
  const ActiveModel empty = assemble_model(p, Vector::Zero(3), 1e-6);
  for (double alpha : {1e-4, 0.01, 0.05}) {
    SolverParams params;
    params.alpha = alpha;
    params.T = 1.0;
    const Vector x = vec({2.0, 1.0, -3.0});
    const Vector g = qp.Q * x + qp.c;
    const Vector Qg = qp.Q * g;
    // Stationary point of tau -> f(x - tau g) - |grad f(x - tau g)|^2 / (2 alpha).
    const double tau = (alpha * g.squaredNorm() - g.dot(Qg)) / (alpha * g.dot(Qg) - Qg.squaredNorm());
    REQUIRE(tau < 1.0 / alpha);
    const LineSearchResult ls = line_search_step(p, x, -g, Vector(0), empty, params);
    CHECK(ls.step == Catch::Approx(tau).epsilon(1e-3));
    CHECK(ls.merit >= ls.merit_default);
  }
}

TEST_CASE("line search never loses against the default step", "[solver]") {
  const ConstrainedProblem p = fixture_problem();
  SolverParams params = fixture_params();
  const VelocityResult vel = velocity(p, vec({-0.5}), params);
  const LineSearchResult ls = line_search_step(p, vec({-0.5}), vel.v, vel.dual.lambda, vel.model, params);
  CHECK(ls.merit >= ls.merit_default);
  CHECK(ls.step > 0.0);
  CHECK(ls.step <= 1.0 / params.alpha);

  const LineSearchResult still = line_search_step(p, vec({0.3}), Vector::Zero(1), vel.dual.lambda, vel.model, params);
  CHECK(still.x_next == vec({0.3}));

  params.line_search = true;
  const SolveResult r = solve(p, vec({1.5}), params);
  CHECK(r.status == SolveStatus::converged);
  CHECK(std::abs(r.x_final[0]) <= 1e-4);
}

TEST_CASE("multiplier reuse runs", "[solver]") {
  const ConstrainedProblem p = fixture_problem();
  SECTION("interior start is gradient descent until a constraint activates") {
    SolverParams params = fixture_params();
    params.T = 1.0;
    params.alpha = 0.1;
    params.max_reuse_steps = 1000;
    const ActiveModel m = assemble_model(p, vec({1.5}), params.eps_g);
    const ReuseRun run = multiplier_reuse_run(p, vec({1.5}), Vector(0), m, params);
    REQUIRE(run.guard_failed_at >= 0);
    REQUIRE(run.guard_failed_at == static_cast<int>(run.points.size()) - 1);
    double x = 1.5;
    for (std::size_t j = 0; j < run.points.size(); ++j) {
      x = x - params.T * 0.2 * (x + 1.0);
      CHECK(run.points[j][0] == Catch::Approx(x).epsilon(1e-14));
      if (j + 1 < run.points.size()) CHECK(run.points[j][0] > params.eps_g);
    }
    CHECK(run.points.back()[0] <= params.eps_g);
  }
  SECTION("guard fails at the first sub-step") {
    const SolverParams params = fixture_params();
    const ActiveModel m = assemble_model(p, vec({0.5}), params.eps_g);
    const ReuseRun run = multiplier_reuse_run(p, vec({0.5}), Vector(0), m, params);
    CHECK(run.points.size() == 1);
    CHECK(run.guard_failed_at == 0);
    CHECK(run.points[0][0] == Catch::Approx(-1.0));
  }
  SECTION("merit rises by at least c1 |grad l|^2 per sub-step") {
    // f = 0.1 x1^2 + 0.5 x2^2 - x1 - x2, g = 1 - x1 >= 0.
    QuadraticProgram qp = unconstrained_qp(vec({0.2, 1.0}), vec({-1.0, -1.0}));
    Matrix A(1, 2);
    A << -1.0, 0.0;
    qp.A_ineq = sparse_from(A);
    qp.b_ineq = vec({1.0});
    const ConstrainedProblem q = qp.to_problem();
    const double mu = 0.2, L = 1.0, alpha = 0.1, T = 2.0 / (L + mu);
    SolverParams params;
    params.T = T;
    params.alpha = alpha;
    params.max_reuse_steps = 20;
    const Vector x0 = vec({1.0, 3.0});
    const VelocityResult vel = velocity(q, x0, params);
    REQUIRE(vel.dual.lambda.size() == 1);
    REQUIRE(vel.dual.lambda[0] > 0.0);
    const ReuseRun run = multiplier_reuse_run(q, x0, vel.dual.lambda, vel.model, params);
    REQUIRE(run.points.size() >= 2);
    const double c1 = rate_constants(mu, L, T, alpha).c1;
    Vector prev = x0;
    for (const Vector& xj : run.points) {
      const double gain = lagrangian_merit(q, xj, vel.dual.lambda, vel.model, alpha) -
                          lagrangian_merit(q, prev, vel.dual.lambda, vel.model, alpha);
      const double g2 = lagrangian_grad(q, prev, vel.dual.lambda, vel.model).squaredNorm();
      CHECK(gain >= c1 * g2 - 1e-12);
      prev = xj;
    }
    CHECK((run.points[0] - (x0 + T * vel.v)).norm() <= 1e-14);
  }
  SECTION("alternating mode converges on the fixture") {
    SolverParams params = fixture_params();
    params.multiplier_reuse = true;
    const SolveResult r = solve(p, vec({1.5}), params);
    CHECK(r.status == SolveStatus::converged);
    CHECK(std::abs(r.x_final[0]) <= 1e-4);
  }
}

TEST_CASE("flow mode follows the continuous decay law", "[solver]") {
  const ConstrainedProblem p = plane_problem();
  SolverParams params;
  params.alpha = 2.0;
  params.tol_prox = 1e-14;
  const double horizon = 1.0 / params.alpha;
  const SolveTrace tr = flow_mode(p, Vector::Zero(2), params, horizon, 200);
  REQUIRE(tr.records.size() == 201);
  const double h0 = tr.records.front().eq_violation, h1 = tr.records.back().eq_violation;
  CHECK(std::abs(h1 - h0 * std::exp(-1.0)) <= 0.02 * h0 * std::exp(-1.0));
}

// The Euler surrogate overshoots a boundary by at most one step before the
// constraint activates, so f is monotone up to contact and rises afterwards by
// no more than first-order in T.
TEST_CASE("flow mode decreases f from a feasible start", "[solver]") {
  SolverParams params;
  params.alpha = 1.0;
  auto check_trace = [](const SolveTrace& tr, double T) {
    std::size_t contact = tr.records.size();
    double vmax = 0.0;
    for (std::size_t k = 0; k < tr.records.size(); ++k) {
      if (contact == tr.records.size() && tr.records[k].active_count > 0) contact = k;
      vmax = std::max(vmax, tr.records[k].v.norm());
    }
    for (std::size_t k = 0; k + 1 < contact; ++k) CHECK(tr.records[k + 1].f <= tr.records[k].f + 1e-12);
    double lowest = tr.records.front().f;
    double rise = 0.0;
    for (const auto& rec : tr.records) {
      rise = std::max(rise, rec.f - lowest);
      lowest = std::min(lowest, rec.f);
    }
    return std::pair<double, double>(rise, T * vmax);
  };
  for (int substeps : {300, 3000}) {
    const SolveTrace tr = flow_mode(fixture_problem(), vec({1.5}), params, 30.0, substeps);
    const auto [rise, scale] = check_trace(tr, 30.0 / substeps);
    // |grad f| <= 0.5 along this run.
    CHECK(rise <= scale * 0.5 + 1e-12);
  }
  {
    const ConstrainedProblem tr_p = gen_trust_region(8, 3);
    const SolveTrace tr = flow_mode(tr_p, tr_p.x0, params, 20.0, 400);
    const auto [rise, scale] = check_trace(tr, 0.05);
    CHECK(rise <= scale * scale);
  }
  {
    const SolveTrace still = flow_mode(fixture_problem(), vec({0.0}), params, 5.0, 50);
    for (const auto& rec : still.records) CHECK(std::abs(rec.x[0]) <= 1e-14);
  }
}

TEST_CASE("trace CSV layout", "[solver]") {
  SolveOptions opts;
  opts.record_trace = true;
  opts.record_d = true;
  const SolveResult r = solve(fixture_problem(), vec({1.5}), fixture_params(), opts);
  std::ostringstream os;
  write_trace_csv(os, *r.trace);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "k,f,d,step_norm,kkt_residual,active_count,max_ineq_violation,eq_violation,inner_iterations");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == r.iterations + 1);
}

TEST_CASE("default step sizes", "[solver]") {
  CHECK(default_step_size(fixture_problem(), vec({1.5}), 0.4) == Catch::Approx(5.0));

  const ConstrainedProblem tr = gen_trust_region(8, 1);
  REQUIRE(tr.meta.L_l_plus_alpha);
  const double T = default_step_size(tr, tr.x0, 0.4);
  CHECK(T * (*tr.meta.L_l + *tr.meta.mu) + 0.4 == Catch::Approx(2.0));

  ConstrainedProblem bare = fixture_problem();
  bare.meta = {};
  CHECK(default_step_size(bare, vec({1.5}), 0.4) == Catch::Approx(5.0).epsilon(1e-3));
}

TEST_CASE("warm started multipliers give the same run", "[solver]") {
  const ConstrainedProblem p = gen_random_qp(16, 4);
  SolverParams params = family_params(Family::random_qp, p);
  const SolveResult cold = solve(p, p.x0, params);
  params.warm_start_lambda = true;
  const SolveResult warm = solve(p, p.x0, params);
  REQUIRE(warm.status == SolveStatus::converged);
  CHECK((warm.x_final - cold.x_final).norm() <= 1e-5);
}
