#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>

#include "velokit/core.hpp"

namespace velokit {

enum class Family { random_qp, trust_region, nu_svm, catenary };

const char* to_string(Family f);
Family family_from_string(const std::string& s);

struct BenchmarkSpec {
  Family family = Family::random_qp;
  int n = 4;  // dimension, sample count n_s, or chain links
  std::uint64_t seed = 0;

  double nu1_factor = 0.1;  // nu_1 = nu1_factor * smallest kernel eigenvalue
  double nu2 = 0.1;
  std::optional<std::string> samples_csv;

  bool ball_only = false;  // trust region without the linear constraints

  double obstacle_cx = 0.5;
  double obstacle_cy = -0.8;
  double obstacle_r = 0.5;
  double init_noise = 0.1;  // catenary initialization noise
};

/// Generator streams: engine mt19937_64 seeded by splitmix64(seed, stream).
/// Each matrix or vector of a recipe draws from its own stream so adding a
/// field to a recipe never shifts the draws of another.
std::mt19937_64 rng_stream(std::uint64_t seed, std::uint64_t stream);

/// Random QP data: Q diagonal [1/20, 1, U(1/20,1)...], A1 (n/2 x n), A2 (n/4 x n),
/// b1, b2 standard normal, c ~ U(-1,1); A1 x + b1 >= 0, A2 x + b2 = 0.
QuadraticProgram random_qp_data(int n, std::uint64_t seed);
ConstrainedProblem gen_random_qp(int n, std::uint64_t seed);

struct TrustRegionData {
  QuadraticProgram linear;  // Q, c, homogeneous A1 x >= 0, A2 x = 0
  double qinv_c_norm = 0.0;
};

TrustRegionData trust_region_data(int n, std::uint64_t seed, bool ball_only = false);

/// Linear constraints of the data plus g = 1 - |x|^2 as the last inequality.
/// Metadata carries L_l without the alpha term and sets L_l_plus_alpha.
ConstrainedProblem gen_trust_region(int n, std::uint64_t seed, bool ball_only = false);
ConstrainedProblem trust_region_problem(const TrustRegionData& data);

struct SvmSamples {
  Matrix r;       // n_s x 2
  Vector labels;  // +1 / -1
};

SvmSamples generate_svm_samples(int n_s, std::uint64_t seed);

/// CSV rows "r1,r2,label"; blank lines and a "r1,r2,label" header are skipped.
SvmSamples read_svm_csv(std::istream& in);
SvmSamples read_svm_csv_file(const std::string& path);

/// exp(-|r_i - r_j|^2 / 2).
Matrix rbf_kernel(const Matrix& r);

struct SvmData {
  QuadraticProgram qp;
  double mu_k = 0.0;
  double lambda_max_k = 0.0;
  double nu1 = 0.0;
};

/// Box 0 <= x_i <= 1/n_s as 2 n_s inequalities (lower bounds first), then
/// sum x_i >= nu2; the single equality is sum x_i l_i = 0.
SvmData nu_svm_data(const SvmSamples& samples, double nu1_factor = 0.1, double nu2 = 0.1);
ConstrainedProblem nu_svm_problem(const SvmData& data);
ConstrainedProblem gen_nu_svm(const SvmSamples& samples, double nu1_factor = 0.1, double nu2 = 0.1);
ConstrainedProblem gen_nu_svm(int n_s, std::uint64_t seed, double nu1_factor = 0.1, double nu2 = 0.1);

struct CatenaryOptions {
  double cx = 0.5, cy = -0.8, r = 0.5;
  double init_noise = 0.1;
  std::uint64_t seed = 0;
};

/// n links between (0,0) and (1,0); variables (x_2, y_2, ..., x_n, y_n).
/// Equalities: link i has squared length 4/n^2. Inequalities: free joints
/// stay outside the obstacle disc.
ConstrainedProblem gen_catenary(int n, const CatenaryOptions& opts = {});

/// Joint coordinates (n+1 rows) from the free variables.
Matrix catenary_joints(const Vector& z, int n);

ConstrainedProblem make_problem(const BenchmarkSpec& spec);

/// Reference parameters for each family; T follows the
/// problem metadata (or 2/n for the chain).
SolverParams family_params(Family family, const ConstrainedProblem& p);

}  // namespace velokit
