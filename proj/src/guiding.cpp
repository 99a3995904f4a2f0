#include "bridgemark/guiding.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/LU>

namespace bridgemark {

namespace {

int interval_count(double T, double h) {
  if (!(T > 0.0)) throw ConfigError("time horizon T must be positive");
  if (!(h > 0.0) || h > T) throw ConfigError("grid mesh h must satisfy 0 < h <= T");
  const double ratio = T / h;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) < 1e-9 * std::max(1.0, ratio)) return static_cast<int>(rounded);
  return static_cast<int>(std::ceil(ratio));
}

}  // namespace

TimeGrid::TimeGrid(std::vector<double> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 2) throw ConfigError("time grid needs at least two knots");
  if (knots_.front() != 0.0) throw ConfigError("time grid must start at 0");
  for (size_t k = 1; k < knots_.size(); ++k)
    if (!(knots_[k] > knots_[k - 1])) throw ConfigError("time grid must be strictly increasing");
}

TimeGrid TimeGrid::transformed(double T, double h) {
  const int K = interval_count(T, h);
  std::vector<double> t(K + 1);
  for (int k = 0; k <= K; ++k) {
    const double u = static_cast<double>(k) / K;
    t[k] = T * u * (2.0 - u);
  }
  t[K] = T;
  return TimeGrid(std::move(t));
}

TimeGrid TimeGrid::uniform(double T, double h) {
  const int K = interval_count(T, h);
  std::vector<double> t(K + 1);
  for (int k = 0; k <= K; ++k) t[k] = T * static_cast<double>(k) / K;
  t[K] = T;
  return TimeGrid(std::move(t));
}

ObservationScheme ObservationScheme::positions(Dims dims, const Vector& vT, double eps) {
  if (!(eps > 0.0)) throw ConfigError("observation noise eps must be strictly positive");
  if (vT.size() != dims.nd()) throw ConfigError("observation has wrong length");
  ObservationScheme obs;
  obs.LT = Matrix::Zero(dims.nd(), dims.state());
  obs.LT.leftCols(dims.nd()).setIdentity();
  obs.SigmaT = eps * eps * Matrix::Identity(dims.nd(), dims.nd());
  obs.vT = vT;
  return obs;
}

void ObservationScheme::validate(int state_dim) const {
  const auto m = LT.rows();
  if (LT.cols() != state_dim) throw ConfigError("LT has wrong column count");
  if (SigmaT.rows() != m || SigmaT.cols() != m) throw ConfigError("SigmaT has wrong shape");
  if (vT.size() != m) throw ConfigError("vT has wrong length");
  if (!(LT * LT.transpose()).isIdentity(1e-12)) throw ConfigError("LT must have orthonormal rows");
  if (initial) {
    if (initial->L0.cols() != state_dim || initial->Sigma0.rows() != initial->L0.rows() ||
        initial->Sigma0.cols() != initial->L0.rows() || initial->v0.size() != initial->L0.rows())
      throw ConfigError("initial observation has inconsistent shapes");
  }
}

GuidingTables solve_backward(const AuxiliaryProcess& aux, const ObservationScheme& obs,
                             const TimeGrid& grid) {
  const int N = aux.state_dim();
  obs.validate(N);
  const int K = grid.intervals();
  const auto m = obs.LT.rows();
  const double log2pi = std::log(2.0 * std::numbers::pi);

  GuidingTables tab(grid);
  tab.L_.resize(K + 1);
  tab.Mdag_.resize(K + 1);
  tab.mu_.resize(K + 1);
  tab.L_[K] = obs.LT;
  tab.Mdag_[K] = obs.SigmaT;
  tab.mu_[K] = Vector::Zero(m);
  tab.v_ = obs.vT;

  const bool B_zero = aux.B.isZero(0.0);
  const bool beta_zero = aux.beta.isZero(0.0);
  const Matrix I = Matrix::Identity(N, N);
  const int c0 = aux.zero_leading, r0 = N - c0;
  const Matrix B12 = aux.B.topRightCorner(c0, r0);
  const Matrix B22 = aux.B.bottomRightCorner(r0, r0);
  const bool B22_zero = B22.isZero(0.0);

  Matrix Ls_next = tab.L_[K] * aux.sigma;
  Matrix LaL_next = Ls_next * Ls_next.transpose();
  Vector Lb_next = tab.L_[K] * aux.beta;
  for (int k = K - 1; k >= 0; --k) {
    const double dt = grid.step(k);
    if (B_zero) {
      tab.L_[k] = tab.L_[k + 1];
    } else if (c0 > 0) {
      // L_k (I - dt B) = L_{k+1} with B = [0 B12; 0 B22] (first c0 columns zero):
      // the leading columns of L are constant, the rest solve a smaller system.
      const Matrix& Ln = tab.L_[k + 1];
      Matrix rhs = Ln.rightCols(r0) + dt * Ln.leftCols(c0) * B12;
      tab.L_[k].resize(m, N);
      tab.L_[k].leftCols(c0) = Ln.leftCols(c0);
      if (B22_zero) {
        tab.L_[k].rightCols(r0) = rhs;
      } else {
        const Matrix A = (Matrix::Identity(r0, r0) - dt * B22).transpose();
        tab.L_[k].rightCols(r0) = A.partialPivLu().solve(rhs.transpose()).transpose();
      }
    } else {
      // L_k (I - dt B) = L_{k+1}
      const Matrix A = (I - dt * aux.B).transpose();
      tab.L_[k] = A.partialPivLu().solve(tab.L_[k + 1].transpose()).transpose();
    }
    const Matrix Ls = tab.L_[k] * aux.sigma;
    const Matrix LaL = Ls * Ls.transpose();
    tab.Mdag_[k] = tab.Mdag_[k + 1] + 0.5 * dt * (LaL + LaL_next);
    if (beta_zero) {
      tab.mu_[k] = tab.mu_[k + 1];
    } else {
      const Vector Lb = tab.L_[k] * aux.beta;
      tab.mu_[k] = tab.mu_[k + 1] + 0.5 * dt * (Lb + Lb_next);
      Lb_next = Lb;
    }
    LaL_next = LaL;
  }

  tab.chol_.resize(K + 1);
  tab.W_.resize(K + 1);
  tab.w_.resize(K + 1);
  tab.Wsig_.resize(K + 1);
  tab.log_det_.resize(K + 1);
  tab.log_norm_.resize(K + 1);
  tab.trace_aH_.resize(K + 1);
  for (int k = 0; k <= K; ++k) {
    // symmetrise against round-off before factorising
    const Matrix Msym = 0.5 * (tab.Mdag_[k] + tab.Mdag_[k].transpose());
    tab.chol_[k].compute(Msym);
    if (tab.chol_[k].info() != Eigen::Success)
      throw NumericalError("M-dagger is not positive definite at knot " + std::to_string(k));
    const auto C = tab.chol_[k].matrixL();
    tab.W_[k] = C.solve(tab.L_[k]);
    tab.w_[k] = C.solve(tab.v_ - tab.mu_[k]);
    tab.Wsig_[k] = tab.W_[k] * aux.sigma;
    tab.trace_aH_[k] = tab.Wsig_[k].squaredNorm();
    tab.log_det_[k] = 2.0 * tab.chol_[k].matrixLLT().diagonal().array().log().sum();
    tab.log_norm_[k] = -0.5 * tab.log_det_[k] - 0.5 * static_cast<double>(m) * log2pi;
    if (!std::isfinite(tab.log_det_[k])) throw NumericalError("M-dagger is singular");
  }

  if (obs.initial) {
    const auto& io = *obs.initial;
    Eigen::LLT<Matrix> c0(io.Sigma0);
    if (c0.info() != Eigen::Success) throw NumericalError("Sigma0 is not positive definite");
    GuidingTables::Initial init;
    init.W0 = c0.matrixL().solve(io.L0);
    init.w0 = c0.matrixL().solve(io.v0);
    const double ld = 2.0 * c0.matrixLLT().diagonal().array().log().sum();
    init.log_norm = -0.5 * ld - 0.5 * static_cast<double>(io.L0.rows()) * log2pi;
    tab.initial_ = std::move(init);
  }
  return tab;
}

GuidedModel make_guided_model(const ModelSpec& spec, const LandmarkConfig& vT_config,
                              const ObservationScheme& obs, const TimeGrid& grid) {
  AuxiliaryProcess aux = auxiliary_for(spec, vT_config);
  GuidingTables tables = solve_backward(aux, obs, grid);
  return GuidedModel{spec, std::move(aux), std::move(tables)};
}

GuidedPath simulate_guided(const GuidedModel& gm, const Vector& x0, const WienerPath& W) {
  GuidedPath path;
  path.log_psi = simulate_guided_generic<double>(gm, x0, W, &path.states);
  return path;
}

LikelihoodTerms log_likelihood_ratio_terms(const GuidedPath& path, const GuidingTables& tables,
                                           const Vector& x0) {
  return {path.log_psi, tables.log_rho_tilde_initial<double>(x0)};
}

}  // namespace bridgemark
