#pragma once

// Drift and diffusion of the three stochastic landmark models in Ito form,
// together with the linear auxiliary process used to build guided proposals.
//
//   Lagrangian  dq = dH/dp dt,  dp = -dH/dq dt + gamma_i dW
//   Langevin    dp gains the damping term -lambda dH/dp dt
//   Eulerian    transport noise sum_l sigma_l(q_i) o dW^l on q and its cotangent
//               lift -d/dq_i (p_i . sigma_l(q_i)) o dW^l on p (Stratonovich);
//               the Ito drift adds the corresponding correction.

#include <string>
#include <vector>

#include "bridgemark/geometry.hpp"

namespace bridgemark {

enum class ModelVariant { Lagrangian, Langevin, Eulerian };

std::string to_string(ModelVariant v);
ModelVariant model_variant_from_string(const std::string& s);

/// sigma(q) = amplitude * kbar_tau(q - center)
struct NoiseField {
  Vector center;
  Vector amplitude;
};

/// Noise-field centres on which each coordinate direction gets its own field
/// (2/pi) gamma_beta kbar_tau(q - delta) e_beta.
struct NoiseFieldGrid {
  std::vector<Vector> centers;
  double tau = 0.5;
  Vector gamma;  // per-direction amplitude, length d

  int dim() const { return static_cast<int>(gamma.size()); }
  int count() const { return static_cast<int>(centers.size()) * dim(); }
  /// Field l = j*d + beta for centre j and direction beta.
  std::vector<NoiseField> fields() const;
  void validate(int d) const;
};

/// Axis-aligned grid with spacing 2*tau covering [lo - 2tau, hi + 2tau] per axis.
NoiseFieldGrid make_noise_grid(const Vector& lo, const Vector& hi, double tau, const Vector& gamma);
/// Bounding box (lo, hi) of a set of flat configurations sharing dims.
std::pair<Vector, Vector> bounding_box(Dims dims, const std::vector<Vector>& configs);

/// Field values sigma_l(q), one vector per field.
std::vector<Vector> noise_field_eval(const NoiseFieldGrid& grid, const Vector& q);

class ModelSpec {
 public:
  static ModelSpec lagrangian(Dims dims, KernelParams kernel, double gamma);
  static ModelSpec langevin(Dims dims, KernelParams kernel, double gamma, double lambda = 0.25);
  static ModelSpec eulerian(Dims dims, KernelParams kernel, NoiseFieldGrid grid);

  ModelVariant variant() const { return variant_; }
  Dims dims() const { return dims_; }
  const KernelParams& kernel() const { return kernel_; }
  double gamma() const { return gamma_; }
  double lambda() const { return lambda_; }
  const NoiseFieldGrid& grid() const { return grid_; }
  const std::vector<NoiseField>& fields() const { return fields_; }
  KernelParams noise_kernel() const { return KernelParams{grid_.tau, 1.0}; }

  /// gamma / sqrt(n): the per-landmark momentum noise amplitude.
  double landmark_gamma() const;
  bool is_eulerian() const { return variant_ == ModelVariant::Eulerian; }

  /// Same model with a different Hamiltonian kernel (used by parameter updates).
  ModelSpec with_kernel(KernelParams k) const;

 private:
  ModelSpec() = default;
  ModelVariant variant_ = ModelVariant::Lagrangian;
  Dims dims_{};
  KernelParams kernel_{};
  double gamma_ = 0.0;
  double lambda_ = 0.0;
  NoiseFieldGrid grid_{};
  std::vector<NoiseField> fields_;
};

/// Dimension N' of the driving Wiener process.
int wiener_dim(const ModelSpec& spec);

namespace detail {

// Kernel value, gradient and the pieces of the Ito correction for one
// (landmark position, field) pair. u = q - centre.
template <class S>
struct FieldEval {
  S kbar;
  VectorX<S> grad;  // grad kbar(u) = -kbar u / tau^2
  S z;              // <grad kbar, g>
  VectorX<S> grad_z;  // Hess(kbar) g = kbar (u <u,g> / tau^4 - g / tau^2)
};

template <class S, class Seg>
FieldEval<S> eval_field(const Seg& q, const NoiseField& f, double tau, bool with_grad_z) {
  const int d = static_cast<int>(f.center.size());
  const double inv_t2 = 1.0 / (tau * tau);
  FieldEval<S> e;
  e.grad.resize(d);
  VectorX<S> u(d);
  S r2(0.0), ug(0.0);
  for (int al = 0; al < d; ++al) {
    u[al] = q[al] - f.center[al];
    r2 += u[al] * u[al];
    ug += u[al] * f.amplitude[al];
  }
  using std::exp;
  using ad::exp;
  e.kbar = exp(r2 * (-0.5 * inv_t2));
  for (int al = 0; al < d; ++al) e.grad[al] = e.kbar * u[al] * (-inv_t2);
  e.z = e.kbar * ug * (-inv_t2);
  if (with_grad_z) {
    e.grad_z.resize(d);
    const S c1 = e.kbar * ug * (inv_t2 * inv_t2);
    for (int al = 0; al < d; ++al) e.grad_z[al] = c1 * u[al] - e.kbar * (f.amplitude[al] * inv_t2);
  }
  return e;
}

}  // namespace detail

/// Ito minus Stratonovich drift of the Eulerian model; zero for other variants.
template <class S>
VectorX<S> strat_to_ito_correction(const ModelSpec& spec, const VectorX<S>& x) {
  const Dims dims = spec.dims();
  const int n = dims.n, d = dims.d, nd = dims.nd();
  VectorX<S> corr = VectorX<S>::Zero(dims.state());
  if (!spec.is_eulerian()) return corr;
  const double tau = spec.grid().tau;
  for (int i = 0; i < n; ++i) {
    const auto qi = x.segment(i * d, d);
    for (const NoiseField& f : spec.fields()) {
      const auto e = detail::eval_field<S>(qi, f, tau, true);
      S pg(0.0);
      for (int al = 0; al < d; ++al) pg += x[nd + i * d + al] * f.amplitude[al];
      const S zk = 0.5 * e.z * e.kbar;
      for (int al = 0; al < d; ++al) {
        corr[i * d + al] += zk * f.amplitude[al];
        corr[nd + i * d + al] += 0.5 * pg * (e.z * e.grad[al] - e.kbar * e.grad_z[al]);
      }
    }
  }
  return corr;
}

/// Ito drift b(x). The models are autonomous, so time is not an argument.
template <class S>
VectorX<S> drift(const ModelSpec& spec, const VectorX<S>& x) {
  const Dims dims = spec.dims();
  const int nd = dims.nd();
  auto [dhdp, dhdq] = hamiltonian_partials(spec.kernel(), dims, x);
  VectorX<S> b(dims.state());
  b.head(nd) = dhdp;
  if (spec.lambda() != 0.0)
    b.tail(nd) = -dhdq - spec.lambda() * dhdp;
  else
    b.tail(nd) = -dhdq;
  if (spec.is_eulerian()) b += strat_to_ito_correction(spec, x);
  return b;
}

/// Drift of the Stratonovich form (no Ito correction).
template <class S>
VectorX<S> stratonovich_drift(const ModelSpec& spec, const VectorX<S>& x) {
  const Dims dims = spec.dims();
  const int nd = dims.nd();
  auto [dhdp, dhdq] = hamiltonian_partials(spec.kernel(), dims, x);
  VectorX<S> b(dims.state());
  b.head(nd) = dhdp;
  b.tail(nd) = -dhdq - spec.lambda() * dhdp;
  return b;
}

/// sigma(x), a 2nd x N' matrix.
template <class S>
MatrixX<S> diffusion(const ModelSpec& spec, const VectorX<S>& x) {
  const Dims dims = spec.dims();
  const int n = dims.n, d = dims.d, nd = dims.nd();
  MatrixX<S> sig = MatrixX<S>::Zero(dims.state(), wiener_dim(spec));
  if (!spec.is_eulerian()) {
    const double g = spec.landmark_gamma();
    for (int r = 0; r < nd; ++r) sig(nd + r, r) = S(g);
    return sig;
  }
  const double tau = spec.grid().tau;
  const auto& fields = spec.fields();
  for (int i = 0; i < n; ++i) {
    const auto qi = x.segment(i * d, d);
    for (size_t l = 0; l < fields.size(); ++l) {
      const NoiseField& f = fields[l];
      const auto e = detail::eval_field<S>(qi, f, tau, false);
      S pg(0.0);
      for (int al = 0; al < d; ++al) pg += x[nd + i * d + al] * f.amplitude[al];
      for (int al = 0; al < d; ++al) {
        sig(i * d + al, l) = e.kbar * f.amplitude[al];
        sig(nd + i * d + al, l) = -pg * e.grad[al];
      }
    }
  }
  return sig;
}

/// Linear auxiliary process  dX = (B X + beta) dt + sigma dW  with constant
/// coefficients obtained by freezing the model at the observed end positions.
struct AuxiliaryProcess {
  Matrix B;
  Vector beta;
  Matrix sigma;
  Matrix a;  // sigma sigma^T
  int zero_leading = 0;  // number of leading all-zero columns of B
  Matrix B_tail;         // B without those columns

  AuxiliaryProcess() = default;
  AuxiliaryProcess(Matrix B_, Vector beta_, Matrix sigma_);

  int state_dim() const { return static_cast<int>(B.rows()); }

  template <class S>
  VectorX<S> drift(const VectorX<S>& x) const {
    const Eigen::Index c0 = zero_leading, m = B.cols() - c0;
    VectorX<S> out = m > 0 ? apply(B_tail, VectorX<S>(x.tail(m))) : VectorX<S>::Zero(B.rows());
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += beta[i];
    return out;
  }
};

AuxiliaryProcess auxiliary_for(const ModelSpec& spec, const LandmarkConfig& qT);

}  // namespace bridgemark
