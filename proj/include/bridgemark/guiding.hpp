#pragma once

// Guided proposals: the backward filter of the linear auxiliary process and the
// forward simulation of the guided process
//
//   dX = b(X) dt + a(X) r(t, X) dt + sigma(X) dW,   r = grad_x log rho~(t, x)
//
// together with the log-likelihood functional log Psi = int_0^T G(s, X_s) ds.

#include <optional>
#include <vector>

#include <Eigen/Cholesky>

#include "bridgemark/models.hpp"

namespace bridgemark {

class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> knots);

  /// Uniform mesh of width h on [0, T] mapped through s -> s(2 - s) after
  /// normalising by T, so knots concentrate near T. When T/h is not an integer
  /// the knot count is rounded up.
  static TimeGrid transformed(double T, double h);
  static TimeGrid uniform(double T, double h);

  const std::vector<double>& knots() const { return knots_; }
  double t(int k) const { return knots_[k]; }
  double T() const { return knots_.back(); }
  int intervals() const { return static_cast<int>(knots_.size()) - 1; }
  double step(int k) const { return knots_[k + 1] - knots_[k]; }

 private:
  std::vector<double> knots_;
};

/// Noisy observation of L0 x0 at time 0 (optional).
struct InitialObservation {
  Matrix L0;
  Matrix Sigma0;
  Vector v0;
};

struct ObservationScheme {
  Matrix LT;      // m x N, orthonormal rows
  Matrix SigmaT;  // m x m
  Vector vT;
  std::optional<InitialObservation> initial;

  /// Positions observed at T with N(0, eps^2 I) noise.
  static ObservationScheme positions(Dims dims, const Vector& vT, double eps);
  void validate(int state_dim) const;
};

/// Output of the backward filter on every knot. Products with M = (M^dag)^{-1}
/// go through the stored Cholesky factor: with M^dag = C C^T we keep
/// W = C^{-1} L and w = C^{-1}(v - mu), so that
///   r~(t, x)     = W^T (w - W x)
///   log rho~(t,x) = -|w - W x|^2 / 2 - log det(M^dag) / 2 - m log(2 pi) / 2
///   H~(t)        = W^T W.
class GuidingTables {
 public:
  int intervals() const { return static_cast<int>(L_.size()) - 1; }
  const TimeGrid& grid() const { return grid_; }
  const Matrix& L(int k) const { return L_[k]; }
  const Vector& mu(int k) const { return mu_[k]; }
  const Vector& v() const { return v_; }
  const Matrix& M_dagger(int k) const { return Mdag_[k]; }
  const Eigen::LLT<Matrix>& chol(int k) const { return chol_[k]; }
  const Matrix& whitened_L(int k) const { return W_[k]; }
  const Vector& whitened_residual(int k) const { return w_[k]; }
  double log_det(int k) const { return log_det_[k]; }
  Matrix H_tilde(int k) const { return W_[k].transpose() * W_[k]; }
  /// tr(a~ H~(t_k)), used by the G integrand.
  double trace_atilde_H(int k) const { return trace_aH_[k]; }
  const Matrix& whitened_sigma(int k) const { return Wsig_[k]; }
  bool has_initial_observation() const { return initial_.has_value(); }

  template <class S>
  VectorX<S> guiding_r(int k, const VectorX<S>& x) const {
    VectorX<S> res = apply(W_[k], x);
    for (Eigen::Index i = 0; i < res.size(); ++i) res[i] = w_[k][i] - res[i];
    return apply_transpose(W_[k], res);
  }

  template <class S>
  S log_rho_tilde(int k, const VectorX<S>& x) const {
    VectorX<S> res = apply(W_[k], x);
    S q(0.0);
    for (Eigen::Index i = 0; i < res.size(); ++i) {
      const S e = w_[k][i] - res[i];
      q += e * e;
    }
    return -0.5 * q + log_norm_[k];
  }

  /// log rho~(0, x) including the time-0 observation factor when configured.
  template <class S>
  S log_rho_tilde_initial(const VectorX<S>& x) const {
    S out = log_rho_tilde(0, x);
    if (initial_) {
      VectorX<S> res = apply(initial_->W0, x);
      S q(0.0);
      for (Eigen::Index i = 0; i < res.size(); ++i) {
        const S e = initial_->w0[i] - res[i];
        q += e * e;
      }
      out += -0.5 * q + initial_->log_norm;
    }
    return out;
  }

  friend GuidingTables solve_backward(const AuxiliaryProcess&, const ObservationScheme&,
                                      const TimeGrid&);

 private:
  struct Initial {
    Matrix W0;
    Vector w0;
    double log_norm = 0.0;
  };
  explicit GuidingTables(TimeGrid grid) : grid_(std::move(grid)) {}

  TimeGrid grid_;
  std::vector<Matrix> L_;
  std::vector<Matrix> Mdag_;
  std::vector<Vector> mu_;
  std::vector<Eigen::LLT<Matrix>> chol_;
  std::vector<Matrix> W_;
  std::vector<Vector> w_;
  std::vector<Matrix> Wsig_;  // W sigma~
  std::vector<double> log_det_;
  std::vector<double> log_norm_;
  std::vector<double> trace_aH_;
  Vector v_;
  std::optional<Initial> initial_;
};

/// Integrates dL = -L B~ dt (implicit Euler), dM^dag = -L a~ L^T dt and
/// dmu = -L beta~ dt (trapezoid) backward from L(T) = LT, M^dag(T) = SigmaT,
/// mu(T) = 0 on the knots of grid. Throws NumericalError if some M^dag(t_k)
/// has no Cholesky factor.
GuidingTables solve_backward(const AuxiliaryProcess& aux, const ObservationScheme& obs,
                             const TimeGrid& grid);

/// Driving noise increments dW_k ~ N(0, (t_{k+1} - t_k) I), column k per interval.
struct WienerPath {
  Matrix increments;  // N' x K

  int dim() const { return static_cast<int>(increments.rows()); }
  int intervals() const { return static_cast<int>(increments.cols()); }
};

/// A guided model: the target model, its auxiliary process and the backward
/// tables built for one observation.
struct GuidedModel {
  ModelSpec spec;
  AuxiliaryProcess aux;
  GuidingTables tables;
};

GuidedModel make_guided_model(const ModelSpec& spec, const LandmarkConfig& vT_config,
                              const ObservationScheme& obs, const TimeGrid& grid);

struct GuidedPath {
  std::vector<Vector> states;  // one per knot
  double log_psi = 0.0;
};

namespace detail {

template <class S>
struct StepEval {
  VectorX<S> drift;   // b + a r~
  MatrixX<S> sigma;   // only filled for state-dependent diffusions
  S G;
};

template <class S>
StepEval<S> eval_step(const GuidedModel& gm, int k, const VectorX<S>& x) {
  const ModelSpec& spec = gm.spec;
  const GuidingTables& tab = gm.tables;
  const Dims dims = spec.dims();
  const int nd = dims.nd();
  StepEval<S> out;
  const VectorX<S> b = drift(spec, x);
  const VectorX<S> r = tab.guiding_r(k, x);
  const VectorX<S> bt = gm.aux.drift(x);
  S G = dot<S>(VectorX<S>(b - bt), r);
  out.drift = b;
  if (!spec.is_eulerian()) {
    // a = diag(0, g^2 I); identical to a~, so the trace term vanishes.
    const double g2 = spec.landmark_gamma() * spec.landmark_gamma();
    for (int i = 0; i < nd; ++i) out.drift[nd + i] += g2 * r[nd + i];
  } else {
    out.sigma = diffusion(spec, x);
    const int J = static_cast<int>(out.sigma.cols());
    VectorX<S> str(J);  // sigma^T r
    for (int l = 0; l < J; ++l) {
      S acc(0.0);
      for (int i = 0; i < dims.state(); ++i) acc += out.sigma(i, l) * r[i];
      str[l] = acc;
    }
    for (int i = 0; i < dims.state(); ++i) {
      S acc(0.0);
      for (int l = 0; l < J; ++l) acc += out.sigma(i, l) * str[l];
      out.drift[i] += acc;
    }
    // tr(a H~) = |W sigma|_F^2 ; r^T a r = |sigma^T r|^2
    S tr_aH(0.0);
    for (int l = 0; l < J; ++l) {
      const VectorX<S> col = out.sigma.col(l);
      const VectorX<S> wc = apply(tab.whitened_L(k), col);
      for (Eigen::Index i = 0; i < wc.size(); ++i) tr_aH += wc[i] * wc[i];
    }
    S rar(0.0);
    for (int l = 0; l < J; ++l) rar += str[l] * str[l];
    const VectorX<S> stil_r = apply_transpose(gm.aux.sigma, r);
    S rar_tilde(0.0);
    for (Eigen::Index l = 0; l < stil_r.size(); ++l) rar_tilde += stil_r[l] * stil_r[l];
    G -= 0.5 * (tr_aH - tab.trace_atilde_H(k));
    G += 0.5 * (rar - rar_tilde);
  }
  out.G = G;
  return out;
}

}  // namespace detail

/// G(t_k, x) = (b - b~)^T r~ - tr([a - a~][H~ - r~ r~^T]) / 2
template <class S>
S G_integrand(const GuidedModel& gm, int k, const VectorX<S>& x) {
  return detail::eval_step(gm, k, x).G;
}

/// Euler-Maruyama for the guided process driven by W, accumulating log Psi with
/// the left-point rule. Deterministic in (x0, W). Throws NumericalError when
/// the state leaves the finite range. If states is non-null it receives the
/// state at every knot; if g_values is non-null it receives G at knots 0..K-1.
template <class S>
S simulate_guided_generic(const GuidedModel& gm, const VectorX<S>& x0, const WienerPath& W,
                          std::vector<VectorX<S>>* states = nullptr,
                          std::vector<double>* g_values = nullptr) {
  const TimeGrid& grid = gm.tables.grid();
  const int K = grid.intervals();
  if (W.intervals() != K) throw ConfigError("Wiener path and time grid disagree on interval count");
  if (W.dim() != wiener_dim(gm.spec)) throw ConfigError("Wiener path has wrong dimension");
  const Dims dims = gm.spec.dims();
  const int nd = dims.nd();
  const double g = gm.spec.landmark_gamma();
  VectorX<S> x = x0;
  if (states) {
    states->clear();
    states->reserve(K + 1);
    states->push_back(x);
  }
  if (g_values) g_values->clear();
  S log_psi(0.0);
  for (int k = 0; k < K; ++k) {
    const double dt = grid.step(k);
    auto ev = detail::eval_step(gm, k, x);
    log_psi += ev.G * dt;
    if (g_values) g_values->push_back(ad::value(ev.G));
    x += dt * ev.drift;
    if (gm.spec.is_eulerian()) {
      for (int i = 0; i < dims.state(); ++i) {
        S acc(0.0);
        for (int l = 0; l < W.dim(); ++l) acc += ev.sigma(i, l) * W.increments(l, k);
        x[i] += acc;
      }
    } else {
      for (int i = 0; i < nd; ++i) x[nd + i] += g * W.increments(i, k);
    }
    if (!all_finite(x) || !ad::all_finite(log_psi))
      throw NumericalError("guided proposal diverged");
    if (states) states->push_back(x);
  }
  return log_psi;
}

GuidedPath simulate_guided(const GuidedModel& gm, const Vector& x0, const WienerPath& W);

/// The two tractable pieces of every acceptance ratio: log Psi of the path and
/// log rho~(0, x0). The intractable rho(0+, x0) cancels and is never formed.
struct LikelihoodTerms {
  double log_psi = 0.0;
  double log_rho_tilde0 = 0.0;
};
LikelihoodTerms log_likelihood_ratio_terms(const GuidedPath& path, const GuidingTables& tables,
                                           const Vector& x0);

}  // namespace bridgemark
