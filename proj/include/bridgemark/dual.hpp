#pragma once

// Forward-mode dual numbers used to differentiate the guided-proposal map
// with respect to the initial state. A Dual<N> carries a value and N
// directional derivatives; gradients wider than N are assembled chunk by chunk.

#include <array>
#include <cmath>
#include <type_traits>

#include <Eigen/Core>

namespace bridgemark::ad {

template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> g{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit so Eigen can build constants

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) g[i] += o.g[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) g[i] -= o.g[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) g[i] = g[i] * o.v + v * o.g[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    const double q = v * inv;
    for (int i = 0; i < N; ++i) g[i] = (g[i] - q * o.g[i]) * inv;
    v = q;
    return *this;
  }
  Dual& operator+=(double s) {
    v += s;
    return *this;
  }
  Dual& operator-=(double s) {
    v -= s;
    return *this;
  }
  Dual& operator*=(double s) {
    v *= s;
    for (int i = 0; i < N; ++i) g[i] *= s;
    return *this;
  }
  Dual& operator/=(double s) { return *this *= (1.0 / s); }
};

static_assert(sizeof(Dual<4>) == 5 * sizeof(double));
static_assert(std::is_standard_layout_v<Dual<4>>);

template <int N> Dual<N> operator-(Dual<N> a) {
  a.v = -a.v;
  for (int i = 0; i < N; ++i) a.g[i] = -a.g[i];
  return a;
}
template <int N> Dual<N> operator+(const Dual<N>& a) { return a; }

template <int N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N> Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N> Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }

template <int N> Dual<N> operator+(Dual<N> a, double s) { return a += s; }
template <int N> Dual<N> operator+(double s, Dual<N> a) { return a += s; }
template <int N> Dual<N> operator-(Dual<N> a, double s) { return a -= s; }
template <int N> Dual<N> operator-(double s, const Dual<N>& a) { return -a + s; }
template <int N> Dual<N> operator*(Dual<N> a, double s) { return a *= s; }
template <int N> Dual<N> operator*(double s, Dual<N> a) { return a *= s; }
template <int N> Dual<N> operator/(Dual<N> a, double s) { return a /= s; }
template <int N> Dual<N> operator/(double s, const Dual<N>& a) {
  Dual<N> r;
  r.v = s / a.v;
  const double f = -r.v / a.v;
  for (int i = 0; i < N; ++i) r.g[i] = f * a.g[i];
  return r;
}

template <int N> bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N> bool operator>(const Dual<N>& a, const Dual<N>& b) { return a.v > b.v; }
template <int N> bool operator<=(const Dual<N>& a, const Dual<N>& b) { return a.v <= b.v; }
template <int N> bool operator>=(const Dual<N>& a, const Dual<N>& b) { return a.v >= b.v; }
template <int N> bool operator==(const Dual<N>& a, const Dual<N>& b) { return a.v == b.v; }
template <int N> bool operator!=(const Dual<N>& a, const Dual<N>& b) { return a.v != b.v; }

template <int N> Dual<N> exp(const Dual<N>& a) {
  Dual<N> r;
  r.v = std::exp(a.v);
  for (int i = 0; i < N; ++i) r.g[i] = r.v * a.g[i];
  return r;
}
template <int N> Dual<N> log(const Dual<N>& a) {
  Dual<N> r;
  r.v = std::log(a.v);
  const double inv = 1.0 / a.v;
  for (int i = 0; i < N; ++i) r.g[i] = inv * a.g[i];
  return r;
}
template <int N> Dual<N> sqrt(const Dual<N>& a) {
  Dual<N> r;
  r.v = std::sqrt(a.v);
  const double f = 0.5 / r.v;
  for (int i = 0; i < N; ++i) r.g[i] = f * a.g[i];
  return r;
}
template <int N> Dual<N> abs(const Dual<N>& a) { return a.v < 0 ? -a : a; }
template <int N> Dual<N> abs2(const Dual<N>& a) { return a * a; }
template <int N> Dual<N> conj(const Dual<N>& a) { return a; }
template <int N> Dual<N> real(const Dual<N>& a) { return a; }
template <int N> Dual<N> imag(const Dual<N>&) { return Dual<N>{}; }

template <int N> bool isfinite(const Dual<N>& a) {
  if (!std::isfinite(a.v)) return false;
  for (double x : a.g)
    if (!std::isfinite(x)) return false;
  return true;
}

// Uniform access to the primal value for double and Dual scalars.
inline double value(double x) { return x; }
template <int N> double value(const Dual<N>& x) { return x.v; }

inline bool all_finite(double x) { return std::isfinite(x); }
template <int N> bool all_finite(const Dual<N>& x) { return isfinite(x); }

}  // namespace bridgemark::ad

namespace Eigen {

template <int N>
struct NumTraits<bridgemark::ad::Dual<N>> : NumTraits<double> {
  using Real = bridgemark::ad::Dual<N>;
  using NonInteger = bridgemark::ad::Dual<N>;
  using Nested = bridgemark::ad::Dual<N>;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = N + 1,
    AddCost = N + 1,
    MulCost = 2 * N + 1
  };
};

template <int N, typename BinaryOp>
struct ScalarBinaryOpTraits<bridgemark::ad::Dual<N>, double, BinaryOp> {
  using ReturnType = bridgemark::ad::Dual<N>;
};
template <int N, typename BinaryOp>
struct ScalarBinaryOpTraits<double, bridgemark::ad::Dual<N>, BinaryOp> {
  using ReturnType = bridgemark::ad::Dual<N>;
};

}  // namespace Eigen
