#include "bridgemark/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>

namespace bridgemark {

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::Lagrangian: return "lagrangian";
    case ModelVariant::Langevin: return "langevin";
    case ModelVariant::Eulerian: return "eulerian";
  }
  return "unknown";
}

ModelVariant model_variant_from_string(const std::string& s) {
  std::string t(s);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "lagrangian") return ModelVariant::Lagrangian;
  if (t == "langevin") return ModelVariant::Langevin;
  if (t == "eulerian") return ModelVariant::Eulerian;
  throw ConfigError("unknown model variant '" + s + "' (expected lagrangian, langevin or eulerian)");
}

std::vector<NoiseField> NoiseFieldGrid::fields() const {
  const int d = dim();
  const double scale = 2.0 / std::numbers::pi;
  std::vector<NoiseField> out;
  out.reserve(centers.size() * d);
  for (const Vector& c : centers) {
    for (int beta = 0; beta < d; ++beta) {
      Vector amp = Vector::Zero(d);
      amp[beta] = scale * gamma[beta];
      out.push_back({c, std::move(amp)});
    }
  }
  return out;
}

void NoiseFieldGrid::validate(int d) const {
  if (!(tau > 0.0)) throw ConfigError("noise-field length scale tau must be positive");
  if (gamma.size() != d) throw ConfigError("noise amplitude gamma must have one entry per dimension");
  if (centers.empty()) throw ConfigError("Eulerian model needs at least one noise-field centre");
  for (const Vector& c : centers)
    if (c.size() != d) throw ConfigError("noise-field centre has wrong dimension");
}

NoiseFieldGrid make_noise_grid(const Vector& lo, const Vector& hi, double tau, const Vector& gamma) {
  if (!(tau > 0.0)) throw ConfigError("noise-field length scale tau must be positive");
  const int d = static_cast<int>(lo.size());
  const double step = 2.0 * tau;
  std::vector<std::vector<double>> axes(d);
  for (int al = 0; al < d; ++al) {
    const double start = lo[al] - step;
    const double stop = hi[al] + step;
    const int count = static_cast<int>(std::ceil((stop - start) / step - 1e-9)) + 1;
    for (int k = 0; k < count; ++k) axes[al].push_back(start + k * step);
  }
  NoiseFieldGrid grid;
  grid.tau = tau;
  grid.gamma = gamma;
  // Cartesian product, first axis fastest.
  std::vector<int> idx(d, 0);
  while (true) {
    Vector c(d);
    for (int al = 0; al < d; ++al) c[al] = axes[al][idx[al]];
    grid.centers.push_back(std::move(c));
    int al = 0;
    while (al < d && ++idx[al] == static_cast<int>(axes[al].size())) idx[al++] = 0;
    if (al == d) break;
  }
  return grid;
}

std::pair<Vector, Vector> bounding_box(Dims dims, const std::vector<Vector>& configs) {
  Vector lo = Vector::Constant(dims.d, std::numeric_limits<double>::infinity());
  Vector hi = -lo;
  for (const Vector& q : configs)
    for (int i = 0; i < dims.n; ++i) {
      lo = lo.cwiseMin(q.segment(i * dims.d, dims.d));
      hi = hi.cwiseMax(q.segment(i * dims.d, dims.d));
    }
  return {lo, hi};
}

std::vector<Vector> noise_field_eval(const NoiseFieldGrid& grid, const Vector& q) {
  std::vector<Vector> out;
  for (const NoiseField& f : grid.fields()) {
    const double k = std::exp(-0.5 * (q - f.center).squaredNorm() / (grid.tau * grid.tau));
    out.push_back(k * f.amplitude);
  }
  return out;
}

ModelSpec ModelSpec::lagrangian(Dims dims, KernelParams kernel, double gamma) {
  ModelSpec m = langevin(dims, kernel, gamma, 0.0);
  m.variant_ = ModelVariant::Lagrangian;
  return m;
}

ModelSpec ModelSpec::langevin(Dims dims, KernelParams kernel, double gamma, double lambda) {
  kernel.validate();
  if (dims.n < 1 || dims.d < 1) throw ConfigError("model needs n >= 1 and d >= 1");
  if (!(gamma >= 0.0)) throw ConfigError("noise amplitude gamma must be non-negative");
  if (!(lambda >= 0.0)) throw ConfigError("damping lambda must be non-negative");
  ModelSpec m;
  m.variant_ = ModelVariant::Langevin;
  m.dims_ = dims;
  m.kernel_ = kernel;
  m.gamma_ = gamma;
  m.lambda_ = lambda;
  return m;
}

ModelSpec ModelSpec::eulerian(Dims dims, KernelParams kernel, NoiseFieldGrid grid) {
  kernel.validate();
  if (dims.n < 1 || dims.d < 1) throw ConfigError("model needs n >= 1 and d >= 1");
  grid.validate(dims.d);
  ModelSpec m;
  m.variant_ = ModelVariant::Eulerian;
  m.dims_ = dims;
  m.kernel_ = kernel;
  m.gamma_ = grid.gamma.size() > 0 ? grid.gamma.maxCoeff() : 0.0;
  m.fields_ = grid.fields();
  m.grid_ = std::move(grid);
  return m;
}

double ModelSpec::landmark_gamma() const { return gamma_ / std::sqrt(static_cast<double>(dims_.n)); }

ModelSpec ModelSpec::with_kernel(KernelParams k) const {
  k.validate();
  ModelSpec m = *this;
  m.kernel_ = k;
  return m;
}

int wiener_dim(const ModelSpec& spec) {
  if (spec.is_eulerian()) return spec.grid().count();
  return spec.dims().nd();
}

AuxiliaryProcess::AuxiliaryProcess(Matrix B_, Vector beta_, Matrix sigma_)
    : B(std::move(B_)), beta(std::move(beta_)), sigma(std::move(sigma_)) {
  if (B.rows() != B.cols() || beta.size() != B.rows() || sigma.rows() != B.rows())
    throw ConfigError("auxiliary process dimensions are inconsistent");
  a = sigma * sigma.transpose();
  while (zero_leading < B.cols() && B.col(zero_leading).isZero(0.0)) ++zero_leading;
  B_tail = B.rightCols(B.cols() - zero_leading);
}

AuxiliaryProcess auxiliary_for(const ModelSpec& spec, const LandmarkConfig& qT) {
  const Dims dims = spec.dims();
  if (qT.dims() != dims) throw ConfigError("observed configuration does not match model dimensions");
  const int n = dims.n, d = dims.d, nd = dims.nd();
  const Matrix K = gram_matrix(spec.kernel(), dims, qT.q());

  Matrix B = Matrix::Zero(dims.state(), dims.state());
  B.block(0, nd, nd, nd) = K;
  if (spec.lambda() != 0.0) B.block(nd, nd, nd, nd) = -spec.lambda() * K;
  Vector beta = Vector::Zero(dims.state());

  Vector x_frozen = Vector::Zero(dims.state());
  x_frozen.head(nd) = qT.q();

  if (spec.is_eulerian()) {
    // Ito correction frozen at q = qT: the q part is constant, the p part is
    // linear in p_i with a d x d block per landmark.
    const double tau = spec.grid().tau;
    for (int i = 0; i < n; ++i) {
      const Vector qi = qT.point(i);
      Matrix block = Matrix::Zero(d, d);
      for (const NoiseField& f : spec.fields()) {
        const auto e = detail::eval_field<double>(qi, f, tau, true);
        beta.segment(i * d, d) += 0.5 * e.z * e.kbar * f.amplitude;
        block += 0.5 * (e.z * e.grad - e.kbar * e.grad_z) * f.amplitude.transpose();
      }
      B.block(nd + i * d, nd + i * d, d, d) += block;
    }
  }
  Matrix sigma = diffusion<double>(spec, x_frozen);
  return AuxiliaryProcess(std::move(B), std::move(beta), std::move(sigma));
}

}  // namespace bridgemark
