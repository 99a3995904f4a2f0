#include "bridgemark/geometry.hpp"

#include <limits>
#include <sstream>

namespace bridgemark {

void KernelParams::validate() const {
  if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("kernel length scale a must be positive");
  if (!(c > 0.0) || !std::isfinite(c)) throw ConfigError("kernel amplitude c must be positive");
}

double min_pairwise_distance(Dims dims, const Vector& q) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < dims.n; ++i)
    for (int j = i + 1; j < dims.n; ++j) {
      const double dist = (q.segment(i * dims.d, dims.d) - q.segment(j * dims.d, dims.d)).norm();
      best = std::min(best, dist);
    }
  return best;
}

LandmarkConfig::LandmarkConfig(int n, int d, Vector q, double min_separation)
    : dims_{n, d}, q_(std::move(q)) {
  if (n < 1 || d < 1) throw ConfigError("landmark configuration needs n >= 1 and d >= 1");
  if (q_.size() != static_cast<Eigen::Index>(n) * d) {
    std::ostringstream os;
    os << "landmark configuration has " << q_.size() << " coordinates, expected " << n * d;
    throw ConfigError(os.str());
  }
  if (!q_.allFinite()) throw ConfigError("landmark configuration contains non-finite values");
  if (n > 1 && !(bridgemark::min_pairwise_distance(dims_, q_) >= min_separation))
    throw ConfigError("landmarks must be pairwise distinct");
}

double LandmarkConfig::min_pairwise_distance() const {
  return bridgemark::min_pairwise_distance(dims_, q_);
}

PhaseState::PhaseState(Dims dims_, Vector x_) : dims(dims_), x(std::move(x_)) {
  if (x.size() != dims.state()) throw ConfigError("phase state length must be 2*n*d");
}

PhaseState::PhaseState(const LandmarkConfig& q, const Vector& p) : dims(q.dims()), x(dims.state()) {
  if (p.size() != dims.nd()) throw ConfigError("momentum length must equal n*d");
  x << q.q(), p;
}

double kernel_eval(const KernelParams& k, const Vector& x) { return k.value_from_sq(x.squaredNorm()); }

Vector kernel_grad(const KernelParams& k, const Vector& x) {
  return -(kernel_eval(k, x) / (k.a * k.a)) * x;
}

Matrix gram_matrix(const KernelParams& k, Dims dims, const Vector& q) {
  const int n = dims.n, d = dims.d;
  Matrix K = Matrix::Zero(dims.nd(), dims.nd());
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      const double kij =
          k.value_from_sq((q.segment(i * d, d) - q.segment(j * d, d)).squaredNorm());
      for (int al = 0; al < d; ++al) {
        K(i * d + al, j * d + al) = kij;
        K(j * d + al, i * d + al) = kij;
      }
    }
  }
  return K;
}

Eigen::LLT<Matrix> gram_cholesky(const KernelParams& k, Dims dims, const Vector& q, double jitter) {
  Matrix K = gram_matrix(k, dims, q);
  if (jitter > 0.0) K.diagonal().array() += jitter;
  Eigen::LLT<Matrix> llt(K);
  if (llt.info() != Eigen::Success)
    throw NumericalError("kernel Gram matrix is not positive definite (near-coincident landmarks)");
  // LLT only checks pivots for positivity; reject numerically degenerate factors too
  const double dmin = llt.matrixLLT().diagonal().minCoeff();
  if (!(dmin > 1e-10 * std::sqrt(k.c))) throw NumericalError("kernel Gram matrix is numerically singular");
  return llt;
}

}  // namespace bridgemark
