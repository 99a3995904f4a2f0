#pragma once

// Landmark configurations, the Gaussian Hamiltonian kernel and the landmark
// Hamiltonian H(q, p) = 1/2 sum_ij <p_i, p_j> k(q_i - q_j).
//
// Phase-space vectors are stored flat as x = [q; p] with q and p of length n*d;
// landmark i, coordinate alpha sits at index i*d + alpha inside each block.

#include <cmath>
#include <utility>

#include <Eigen/Cholesky>

#include "bridgemark/linalg.hpp"

namespace bridgemark {

struct KernelParams {
  double a = 1.0;  // length scale
  double c = 1.0;  // amplitude

  void validate() const;

  template <class S>
  S value_from_sq(const S& r2) const {
    using std::exp;
    using ad::exp;
    return c * exp(r2 * (-0.5 / (a * a)));
  }
};

/// Landmark count and spatial dimension.
struct Dims {
  int n = 0;
  int d = 0;
  int nd() const { return n * d; }
  int state() const { return 2 * n * d; }
  bool operator==(const Dims&) const = default;
};

class LandmarkConfig {
 public:
  /// Rejects length mismatches and landmark pairs closer than min_separation.
  LandmarkConfig(int n, int d, Vector q, double min_separation = 1e-8);

  int n() const { return dims_.n; }
  int d() const { return dims_.d; }
  Dims dims() const { return dims_; }
  const Vector& q() const { return q_; }
  auto point(int i) const { return q_.segment(static_cast<Eigen::Index>(i) * dims_.d, dims_.d); }

  double min_pairwise_distance() const;

 private:
  Dims dims_;
  Vector q_;
};

double min_pairwise_distance(Dims dims, const Vector& q);

struct PhaseState {
  Dims dims;
  Vector x;  // [q; p]

  PhaseState(Dims dims, Vector x);
  PhaseState(const LandmarkConfig& q, const Vector& p);

  auto q() const { return x.head(dims.nd()); }
  auto p() const { return x.tail(dims.nd()); }
};

double kernel_eval(const KernelParams& k, const Vector& x);
Vector kernel_grad(const KernelParams& k, const Vector& x);

/// Sum over landmark pairs of <p_i, p_j> k(q_i - q_j), halved.
template <class S>
S hamiltonian(const KernelParams& k, Dims dims, const VectorX<S>& x) {
  const int n = dims.n, d = dims.d, nd = dims.nd();
  S h(0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      S r2(0.0), pp(0.0);
      for (int al = 0; al < d; ++al) {
        const S diff = x[i * d + al] - x[j * d + al];
        r2 += diff * diff;
        pp += x[nd + i * d + al] * x[nd + j * d + al];
      }
      h += pp * k.value_from_sq(r2);
    }
  }
  return 0.5 * h;
}

/// Returns (dH/dp, dH/dq), each of length n*d.
template <class S>
std::pair<VectorX<S>, VectorX<S>> hamiltonian_partials(const KernelParams& k, Dims dims,
                                                       const VectorX<S>& x) {
  const int n = dims.n, d = dims.d, nd = dims.nd();
  const double inv_a2 = 1.0 / (k.a * k.a);
  VectorX<S> dhdp = VectorX<S>::Zero(nd);
  VectorX<S> dhdq = VectorX<S>::Zero(nd);
  VectorX<S> diff(d);
  for (int i = 0; i < n; ++i) {
    for (int al = 0; al < d; ++al) dhdp[i * d + al] += k.c * x[nd + i * d + al];
    for (int j = i + 1; j < n; ++j) {
      S r2(0.0), pp(0.0);
      for (int al = 0; al < d; ++al) {
        diff[al] = x[i * d + al] - x[j * d + al];
        r2 += diff[al] * diff[al];
        pp += x[nd + i * d + al] * x[nd + j * d + al];
      }
      const S kij = k.value_from_sq(r2);
      // grad k(q_i - q_j) = -k / a^2 (q_i - q_j); antisymmetric in (i, j)
      const S f = pp * kij * inv_a2;
      for (int al = 0; al < d; ++al) {
        dhdp[i * d + al] += kij * x[nd + j * d + al];
        dhdp[j * d + al] += kij * x[nd + i * d + al];
        const S g = f * diff[al];
        dhdq[i * d + al] -= g;
        dhdq[j * d + al] += g;
      }
    }
  }
  return {std::move(dhdp), std::move(dhdq)};
}

/// K(q) with blocks k(q_i - q_j) I_d.
Matrix gram_matrix(const KernelParams& k, Dims dims, const Vector& q);
inline Matrix gram_matrix(const KernelParams& k, const LandmarkConfig& q) {
  return gram_matrix(k, q.dims(), q.q());
}

/// Cholesky of K(q) + jitter*I; throws NumericalError when it does not exist.
Eigen::LLT<Matrix> gram_cholesky(const KernelParams& k, Dims dims, const Vector& q,
                                 double jitter = 0.0);

}  // namespace bridgemark
