#include "velokit/problems.hpp"

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

namespace velokit {

const char* to_string(Family f) {
  switch (f) {
    case Family::random_qp:
      return "random_qp";
    case Family::trust_region:
      return "trust_region";
    case Family::nu_svm:
      return "nu_svm";
    case Family::catenary:
      return "catenary";
  }
  return "random_qp";
}

Family family_from_string(const std::string& s) {
  if (s == "random_qp") return Family::random_qp;
  if (s == "trust_region") return Family::trust_region;
  if (s == "nu_svm") return Family::nu_svm;
  if (s == "catenary") return Family::catenary;
  throw ConfigError("unknown problem family '" + s + "' (expected random_qp, trust_region, nu_svm, catenary)");
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream ids of the recipes; fixed forever for reproducibility.
enum Stream : std::uint64_t { kQdiag = 1, kA1, kA2, kB1, kB2, kC, kSvmPlus, kSvmMinus, kChainInit };

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix A(rows, cols);
  // Row-major fill order so that the draw sequence does not depend on storage.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) A(i, j) = nd(rng);
  return A;
}

Vector normal_vector(Eigen::Index n, std::mt19937_64& rng) { return normal_matrix(n, 1, rng).col(0); }

SparseMatrix diag_sparse(const Vector& d) {
  SparseMatrix D(d.size(), d.size());
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i < d.size(); ++i) t.emplace_back(i, i, d[i]);
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

void require_random_qp_size(int n) {
  if (n < 4 || n % 4 != 0) throw ConfigError("random QP size n must be a positive multiple of 4, got " + std::to_string(n));
}

Vector random_qp_diagonal(int n, std::uint64_t seed) {
  auto rng = rng_stream(seed, kQdiag);
  std::uniform_real_distribution<double> ud(1.0 / 20.0, 1.0);
  Vector q(n);
  q[0] = 1.0 / 20.0;
  q[1] = 1.0;
  for (int i = 2; i < n; ++i) q[i] = ud(rng);
  return q;
}

Vector random_qp_c(int n, std::uint64_t seed) {
  auto rng = rng_stream(seed, kC);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  Vector c(n);
  for (int i = 0; i < n; ++i) c[i] = ud(rng);
  return c;
}

}  // namespace

std::mt19937_64 rng_stream(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL)));
}

QuadraticProgram random_qp_data(int n, std::uint64_t seed) {
  require_random_qp_size(n);
  QuadraticProgram qp;
  qp.Q = diag_sparse(random_qp_diagonal(n, seed));
  qp.c = random_qp_c(n, seed);
  auto r1 = rng_stream(seed, kA1);
  auto r2 = rng_stream(seed, kA2);
  auto r3 = rng_stream(seed, kB1);
  auto r4 = rng_stream(seed, kB2);
  qp.A_ineq = normal_matrix(n / 2, n, r1).sparseView();
  qp.A_eq = normal_matrix(n / 4, n, r2).sparseView();
  qp.b_ineq = normal_vector(n / 2, r3);
  qp.b_eq = normal_vector(n / 4, r4);
  return qp;
}

ConstrainedProblem gen_random_qp(int n, std::uint64_t seed) {
  ProblemMetadata meta;
  meta.L = 1.0;
  meta.mu = 1.0 / 20.0;
  meta.L_l = 1.0;
  meta.objective_convex = true;
  meta.name = "random_qp";
  ConstrainedProblem p = random_qp_data(n, seed).to_problem(meta);
  p.x0 = Vector::Zero(n);
  return p;
}

TrustRegionData trust_region_data(int n, std::uint64_t seed, bool ball_only) {
  require_random_qp_size(n);
  TrustRegionData d;
  const Vector q = random_qp_diagonal(n, seed);
  d.linear.Q = diag_sparse(q);
  d.linear.c = random_qp_c(n, seed);
  if (ball_only) {
    d.linear.A_ineq = SparseMatrix(0, n);
    d.linear.A_eq = SparseMatrix(0, n);
    d.linear.b_ineq = Vector(0);
    d.linear.b_eq = Vector(0);
  } else {
    auto r1 = rng_stream(seed, kA1);
    auto r2 = rng_stream(seed, kA2);
    d.linear.A_ineq = normal_matrix(n / 2, n, r1).sparseView();
    d.linear.A_eq = normal_matrix(n / 4, n, r2).sparseView();
    d.linear.b_ineq = Vector::Zero(n / 2);
    d.linear.b_eq = Vector::Zero(n / 4);
  }
  d.qinv_c_norm = d.linear.c.cwiseQuotient(q).norm();
  return d;
}

ConstrainedProblem trust_region_problem(const TrustRegionData& data) {
  ConstrainedProblem base = data.linear.to_problem();
  const int n = base.dim;
  const int n_lin = base.n_ineq;

  ConstrainedProblem p = base;
  p.n_ineq = n_lin + 1;
  auto lin_g = base.ineq;
  auto lin_grad = base.ineq_grad;
  p.ineq = [lin_g, n_lin](const Vector& x) -> Vector {
    Vector g(n_lin + 1);
    g.head(n_lin) = lin_g(x);
    g[n_lin] = 1.0 - x.squaredNorm();
    return g;
  };
  p.ineq_grad = [lin_grad, n_lin, n](const Vector& x) -> SparseMatrix {
    const SparseMatrix J = lin_grad(x);
    SparseMatrix out(n, n_lin + 1);
    out.reserve(J.nonZeros() + n);
    for (Eigen::Index j = 0; j < n_lin; ++j) {
      out.startVec(j);
      for (SparseMatrix::InnerIterator it(J, j); it; ++it) out.insertBack(it.row(), j) = it.value();
    }
    out.startVec(n_lin);
    for (Eigen::Index i = 0; i < n; ++i)
      if (x[i] != 0.0) out.insertBack(i, n_lin) = -2.0 * x[i];
    out.finalize();
    return out;
  };
  const double L = 1.0;
  p.meta.L = L;
  p.meta.mu = 1.0 / 20.0;
  p.meta.L_l = L * (2.0 + data.qinv_c_norm * std::numbers::sqrt2 / 2.0);
  p.meta.L_l_plus_alpha = true;
  p.meta.objective_convex = true;
  p.meta.feasible_set_convex = true;
  p.meta.name = "trust_region";
  p.x0 = Vector::Zero(n);
  return p;
}

ConstrainedProblem gen_trust_region(int n, std::uint64_t seed, bool ball_only) {
  return trust_region_problem(trust_region_data(n, seed, ball_only));
}

SvmSamples generate_svm_samples(int n_s, std::uint64_t seed) {
  if (n_s < 2) throw ConfigError("nu-SVM needs at least 2 samples");
  SvmSamples s;
  s.r.resize(n_s, 2);
  s.labels.resize(n_s);
  auto plus = rng_stream(seed, kSvmPlus);
  auto minus = rng_stream(seed, kSvmMinus);
  std::normal_distribution<double> rad_plus(2.0, 0.5), rad_minus(0.0, 0.5);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  // Alternate labels so both classes are present for any n_s >= 2.
  for (int i = 0; i < n_s; ++i) {
    const bool pos = (i % 2) == 0;
    auto& rng = pos ? plus : minus;
    const double rad = pos ? rad_plus(rng) : rad_minus(rng);
    const double a = angle(rng);
    s.r(i, 0) = rad * std::cos(a);
    s.r(i, 1) = rad * std::sin(a);
    s.labels[i] = pos ? 1.0 : -1.0;
  }
  return s;
}

SvmSamples read_svm_csv(std::istream& in) {
  std::vector<std::array<double, 3>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (lineno == 1 && line.find("label") != std::string::npos) continue;  // header
    std::array<double, 3> v{};
    std::stringstream ss(line);
    std::string field;
    int k = 0;
    bool bad = false;
    while (std::getline(ss, field, ',')) {
      if (k >= 3) {
        bad = true;
        break;
      }
      try {
        std::size_t used = 0;
        v[static_cast<std::size_t>(k)] = std::stod(field, &used);
        if (field.find_first_not_of(" \t", used) != std::string::npos) bad = true;
      } catch (const std::exception&) {
        bad = true;
      }
      ++k;
    }
    if (bad || k != 3) throw ConfigError("SVM samples: malformed row at line " + std::to_string(lineno));
    if (v[2] != 1.0 && v[2] != -1.0)
      throw ConfigError("SVM samples: label must be 1 or -1 at line " + std::to_string(lineno));
    rows.push_back(v);
  }
  if (rows.size() < 2) throw ConfigError("SVM samples: need at least 2 rows");
  SvmSamples s;
  s.r.resize(static_cast<Eigen::Index>(rows.size()), 2);
  s.labels.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s.r(static_cast<Eigen::Index>(i), 0) = rows[i][0];
    s.r(static_cast<Eigen::Index>(i), 1) = rows[i][1];
    s.labels[static_cast<Eigen::Index>(i)] = rows[i][2];
  }
  return s;
}

SvmSamples read_svm_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open SVM sample file " + path);
  return read_svm_csv(in);
}

Matrix rbf_kernel(const Matrix& r) {
  const Eigen::Index n = r.rows();
  Matrix K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) K(i, j) = K(j, i) = std::exp(-0.5 * (r.row(i) - r.row(j)).squaredNorm());
  }
  return K;
}

SvmData nu_svm_data(const SvmSamples& samples, double nu1_factor, double nu2) {
  const Eigen::Index n = samples.r.rows();
  if (n < 2 || samples.labels.size() != n) throw ConfigError("nu-SVM: need at least 2 labelled samples");
  SvmData d;
  const Matrix K = rbf_kernel(samples.r);
  Eigen::SelfAdjointEigenSolver<Matrix> es(K, Eigen::EigenvaluesOnly);
  d.mu_k = es.eigenvalues()[0];
  d.lambda_max_k = es.eigenvalues()[n - 1];
  d.nu1 = nu1_factor * d.mu_k;

  Matrix H = samples.labels.asDiagonal() * K * samples.labels.asDiagonal();
  H.diagonal().array() += d.nu1;
  d.qp.Q = H.sparseView();
  d.qp.c = Vector::Zero(n);

  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i < n; ++i) {
    t.emplace_back(i, i, 1.0);
    t.emplace_back(n + i, i, -1.0);
    t.emplace_back(2 * n, i, 1.0);
  }
  d.qp.A_ineq.resize(2 * n + 1, n);
  d.qp.A_ineq.setFromTriplets(t.begin(), t.end());
  d.qp.b_ineq = Vector::Zero(2 * n + 1);
  d.qp.b_ineq.segment(n, n).setConstant(1.0 / static_cast<double>(n));
  d.qp.b_ineq[2 * n] = -nu2;

  d.qp.A_eq = samples.labels.transpose().sparseView();
  d.qp.b_eq = Vector::Zero(1);
  return d;
}

ConstrainedProblem gen_nu_svm(const SvmSamples& samples, double nu1_factor, double nu2) {
  return nu_svm_problem(nu_svm_data(samples, nu1_factor, nu2));
}

ConstrainedProblem nu_svm_problem(const SvmData& d) {
  ProblemMetadata meta;
  meta.mu = d.mu_k + d.nu1;
  meta.L = d.lambda_max_k + d.nu1;
  meta.L_l = meta.L;
  meta.objective_convex = true;
  meta.name = "nu_svm";
  ConstrainedProblem p = d.qp.to_problem(meta);
  p.x0 = Vector::Zero(p.dim);
  return p;
}

ConstrainedProblem gen_nu_svm(int n_s, std::uint64_t seed, double nu1_factor, double nu2) {
  return gen_nu_svm(generate_svm_samples(n_s, seed), nu1_factor, nu2);
}

Matrix catenary_joints(const Vector& z, int n) {
  Matrix P(n + 1, 2);
  P.row(0) << 0.0, 0.0;
  P.row(n) << 1.0, 0.0;
  for (int j = 1; j < n; ++j) P.row(j) << z[2 * (j - 1)], z[2 * (j - 1) + 1];
  return P;
}

ConstrainedProblem gen_catenary(int n, const CatenaryOptions& opts) {
  if (n < 2) throw ConfigError("catenary needs at least 2 links");
  const int dim = 2 * (n - 1);
  const double link_sq = 4.0 / (static_cast<double>(n) * n);
  const double weight = 9.81 / (n + 1);
  const double cx = opts.cx, cy = opts.cy, r2 = opts.r * opts.r;

  ConstrainedProblem p;
  p.dim = dim;
  p.n_eq = n;
  p.n_ineq = n - 1;
  // Free joint j (1-based 2..n) occupies z[2(j-2)], z[2(j-2)+1].
  p.objective = [weight, n](const Vector& z) {
    double s = 0.0;
    for (int j = 0; j < n - 1; ++j) s += z[2 * j + 1];
    return weight * s;
  };
  p.objective_grad = [weight, n, dim](const Vector&) -> Vector {
    Vector g = Vector::Zero(dim);
    for (int j = 0; j < n - 1; ++j) g[2 * j + 1] = weight;
    return g;
  };
  p.eq = [n, link_sq](const Vector& z) -> Vector {
    const Matrix P = catenary_joints(z, n);
    Vector h(n);
    for (int i = 0; i < n; ++i) h[i] = (P.row(i) - P.row(i + 1)).squaredNorm() - link_sq;
    return h;
  };
  p.eq_grad = [n, dim](const Vector& z) -> SparseMatrix {
    const Matrix P = catenary_joints(z, n);
    std::vector<Triplet> t;
    for (int i = 0; i < n; ++i) {
      const Eigen::RowVector2d dlt = 2.0 * (P.row(i) - P.row(i + 1));
      if (i >= 1) {  // joint i (0-based) is free
        t.emplace_back(2 * (i - 1), i, dlt[0]);
        t.emplace_back(2 * (i - 1) + 1, i, dlt[1]);
      }
      if (i + 1 <= n - 1) {
        t.emplace_back(2 * i, i, -dlt[0]);
        t.emplace_back(2 * i + 1, i, -dlt[1]);
      }
    }
    SparseMatrix J(dim, n);
    J.setFromTriplets(t.begin(), t.end());
    return J;
  };
  p.ineq = [n, cx, cy, r2](const Vector& z) -> Vector {
    Vector g(n - 1);
    for (int j = 0; j < n - 1; ++j) {
      const double dx = z[2 * j] - cx, dy = z[2 * j + 1] - cy;
      g[j] = dx * dx + dy * dy - r2;
    }
    return g;
  };
  p.ineq_grad = [n, dim, cx, cy](const Vector& z) -> SparseMatrix {
    std::vector<Triplet> t;
    for (int j = 0; j < n - 1; ++j) {
      t.emplace_back(2 * j, j, 2.0 * (z[2 * j] - cx));
      t.emplace_back(2 * j + 1, j, 2.0 * (z[2 * j + 1] - cy));
    }
    SparseMatrix J(dim, n - 1);
    J.setFromTriplets(t.begin(), t.end());
    return J;
  };
  p.meta.L = 0.0;
  p.meta.name = "catenary";

  // Straight segment between the endpoints plus Gaussian noise: links too short.
  auto rng = rng_stream(opts.seed, kChainInit);
  std::normal_distribution<double> nd(0.0, opts.init_noise);
  p.x0.resize(dim);
  for (int j = 0; j < n - 1; ++j) {
    p.x0[2 * j] = static_cast<double>(j + 1) / n + nd(rng);
    p.x0[2 * j + 1] = nd(rng);
  }
  return p;
}

ConstrainedProblem make_problem(const BenchmarkSpec& spec) {
  switch (spec.family) {
    case Family::random_qp:
      return gen_random_qp(spec.n, spec.seed);
    case Family::trust_region:
      return gen_trust_region(spec.n, spec.seed, spec.ball_only);
    case Family::nu_svm:
      if (spec.samples_csv) return gen_nu_svm(read_svm_csv_file(*spec.samples_csv), spec.nu1_factor, spec.nu2);
      return gen_nu_svm(spec.n, spec.seed, spec.nu1_factor, spec.nu2);
    case Family::catenary: {
      CatenaryOptions o;
      o.cx = spec.obstacle_cx;
      o.cy = spec.obstacle_cy;
      o.r = spec.obstacle_r;
      o.init_noise = spec.init_noise;
      o.seed = spec.seed;
      return gen_catenary(spec.n, o);
    }
  }
  throw ConfigError("unknown family");
}

SolverParams family_params(Family family, const ConstrainedProblem& p) {
  SolverParams s;
  s.eps_g = 1e-6;
  s.omega = 1.0;
  s.tol = 1e-6;
  double alpha_T = 0.4;
  switch (family) {
    case Family::random_qp:
    case Family::nu_svm:
      s.T = 2.0 / (p.meta.L_l.value_or(p.meta.L.value_or(1.0)) + p.meta.mu.value_or(0.0));
      break;
    case Family::trust_region:
      // T = 2/(L_l + alpha + mu) with alpha = alphaT / T.
      s.T = (2.0 - alpha_T) / (p.meta.L_l.value_or(1.0) + p.meta.mu.value_or(0.0));
      break;
    case Family::catenary:
      alpha_T = 0.8;
      s.T = 2.0 / p.n_eq;
      s.maxiter = 10000;
      s.maxiter_prox = 10000;
      s.tol_prox = 1e-8;
      break;
  }
  s.alpha = alpha_T / s.T;
  return s;
}

}  // namespace velokit
