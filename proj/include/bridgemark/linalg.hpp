#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "bridgemark/dual.hpp"

namespace bridgemark {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
template <class S> using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S> using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Raised when a computation leaves the finite range or a factorization fails.
/// MCMC moves treat it as a rejected proposal.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised on invalid inputs: bad parameters, inconsistent dimensions.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// A * x for a constant matrix and a vector of any supported scalar.
inline Vector apply(const Matrix& A, const Vector& x) { return A * x; }

// For dual vectors the value/tangent block is contiguous, so A * x is a single
// dense product on the (N+1) x n view.
template <int N>
VectorX<ad::Dual<N>> apply(const Matrix& A, const VectorX<ad::Dual<N>>& x) {
  VectorX<ad::Dual<N>> out(A.rows());
  Eigen::Map<const Eigen::Matrix<double, N + 1, Eigen::Dynamic>> X(
      reinterpret_cast<const double*>(x.data()), N + 1, x.size());
  Eigen::Map<Eigen::Matrix<double, N + 1, Eigen::Dynamic>> Y(
      reinterpret_cast<double*>(out.data()), N + 1, A.rows());
  Y.noalias() = X * A.transpose();
  return out;
}

// A^T * x
inline Vector apply_transpose(const Matrix& A, const Vector& x) { return A.transpose() * x; }

template <int N>
VectorX<ad::Dual<N>> apply_transpose(const Matrix& A, const VectorX<ad::Dual<N>>& x) {
  VectorX<ad::Dual<N>> out(A.cols());
  Eigen::Map<const Eigen::Matrix<double, N + 1, Eigen::Dynamic>> X(
      reinterpret_cast<const double*>(x.data()), N + 1, x.size());
  Eigen::Map<Eigen::Matrix<double, N + 1, Eigen::Dynamic>> Y(
      reinterpret_cast<double*>(out.data()), N + 1, A.cols());
  Y.noalias() = X * A;
  return out;
}

template <class S>
S dot(const VectorX<S>& a, const VectorX<S>& b) {
  S acc(0.0);
  for (Eigen::Index i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <class S>
bool all_finite(const VectorX<S>& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!ad::all_finite(x[i])) return false;
  return true;
}

template <class S>
Vector values(const VectorX<S>& x) {
  Vector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = ad::value(x[i]);
  return out;
}

}  // namespace bridgemark
