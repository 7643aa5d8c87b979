#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <stdexcept>
#include <string>

namespace velokit {

template <class Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Column-compressed storage: columns of a constraint Jacobian are gradients.
template <class Scalar>
using SparseMatrixT = Eigen::SparseMatrix<Scalar, Eigen::ColMajor>;

using Vector = VectorT<double>;
using Matrix = MatrixT<double>;
using SparseMatrix = SparseMatrixT<double>;
using Triplet = Eigen::Triplet<double>;

/// Evaluator returned NaN/Inf or threw while evaluating the problem at a point.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters, mismatched dimensions, malformed input files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A multiplier column with (numerically) zero gradient reached the dual solver.
class DegenerateConstraintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Enumeration oracle found no sign- and slackness-consistent pattern.
class DegenerateModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace velokit
