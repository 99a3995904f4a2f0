#pragma once

// Shared oracles and statistics for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/LU>

#include "bridgemark/inference.hpp"

namespace testing {

using bridgemark::Matrix;
using bridgemark::RandomStream;
using bridgemark::Vector;

inline Vector random_vector(RandomStream& rng, int size, double lo = -1.0, double hi = 1.0) {
  Vector v(size);
  for (int i = 0; i < size; ++i) v[i] = lo + (hi - lo) * rng.uniform();
  return v;
}

inline Vector normal_vector(RandomStream& rng, int size, double scale = 1.0) {
  Vector v(size);
  for (int i = 0; i < size; ++i) v[i] = scale * rng.normal();
  return v;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(b), 1e-300);
}

/// Relative error of two vectors in the max norm.
inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

/// Central finite-difference gradient.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// Fourth-order central difference (five-point stencil) of a vector-valued map.
inline Matrix fd_jacobian5(const std::function<Vector(const Vector&)>& f, const Vector& x,
                           double h) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    auto at = [&](double s) {
      Vector y = x;
      y[j] += s * h;
      return f(y);
    };
    J.col(j) = (8.0 * (at(1) - at(-1)) - (at(2) - at(-2))) / (12.0 * h);
  }
  return J;
}

/// Ito minus Stratonovich drift from the generic formula
/// 1/2 sum_l sum_j d sigma_{il} / d x_j sigma_{jl}, with the Jacobian of each
/// column of sigma taken by finite differences.
inline Vector ito_correction_oracle(const bridgemark::ModelSpec& spec, const Vector& x,
                                    double h = 1e-3) {
  const Matrix sig = bridgemark::diffusion<double>(spec, x);
  Vector corr = Vector::Zero(x.size());
  for (Eigen::Index l = 0; l < sig.cols(); ++l) {
    const Matrix J = fd_jacobian5(
        [&](const Vector& y) { return Vector(bridgemark::diffusion<double>(spec, y).col(l)); }, x,
        h);
    corr += 0.5 * J * sig.col(l);
  }
  return corr;
}

/// Eulerian model with randomly placed centres and random amplitudes.
inline bridgemark::ModelSpec random_eulerian(RandomStream& rng, bridgemark::Dims dims, int centres) {
  bridgemark::NoiseFieldGrid grid;
  grid.tau = 0.4 + 0.6 * rng.uniform();
  grid.gamma = random_vector(rng, dims.d, 0.05, 1.0);
  for (int j = 0; j < centres; ++j) grid.centers.push_back(random_vector(rng, dims.d, -1.5, 1.5));
  const bridgemark::KernelParams k{0.5 + rng.uniform(), 0.5 + rng.uniform()};
  return bridgemark::ModelSpec::eulerian(dims, k, grid);
}

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Standard error of the mean of a correlated series by non-overlapping batch means.
inline double batch_means_se(const std::vector<double>& v, int batches = 50) {
  const std::size_t size = v.size() / batches;
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < size; ++i) s += v[b * size + i];
    means.push_back(s / static_cast<double>(size));
  }
  return std::sqrt(variance(means) / batches);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Kolmogorov-Smirnov statistic of a sample against N(mu, sd^2).
inline double ks_statistic_normal(std::vector<double> v, double mu, double sd) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double F = normal_cdf((v[i] - mu) / sd);
    d = std::max({d, (i + 1) / n - F, F - i / n});
  }
  return d;
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
inline double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

}  // namespace testing
