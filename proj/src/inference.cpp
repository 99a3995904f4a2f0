#include "bridgemark/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <thread>

namespace bridgemark {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <int Width>
void gradient_chunk(const GuidedModel& gm, const Vector& x0, const WienerPath& W, int offset,
                    int begin, int count, Vector& grad) {
  using D = ad::Dual<Width>;
  VectorX<D> x(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) x[i] = D(x0[i]);
  for (int c = 0; c < count; ++c) x[offset + begin + c].g[c] = 1.0;
  const D obj = simulate_guided_generic<D>(gm, x, W) + gm.tables.log_rho_tilde_initial<D>(x);
  if (!ad::isfinite(obj)) throw NumericalError("non-finite gradient of the guided objective");
  for (int c = 0; c < count; ++c) grad[begin + c] = obj.g[c];
}

template <int Width>
Vector gradient_chunked(const GuidedModel& gm, const Vector& x0, const WienerPath& W, int offset,
                        int len) {
  Vector grad(len);
  for (int begin = 0; begin < len; begin += Width)
    gradient_chunk<Width>(gm, x0, W, offset, begin, std::min(Width, len - begin), grad);
  return grad;
}

Vector summed_gradient(const ChainState& st, const Vector& x0, GradientBlock block, int threads) {
  std::vector<Vector> parts(st.shapes.size());
  parallel_for(st.shapes.size(), threads, [&](std::size_t i) {
    parts[i] = guided_objective_gradient(st.shapes[i].model, x0, st.shapes[i].W, block);
  });
  Vector g = Vector::Zero(st.dims.nd());
  for (const Vector& p : parts) g += p;
  return g;
}

struct Proposal {
  std::vector<GuidedPath> paths;
  std::vector<double> log_rho0;
  double log_psi_sum = 0.0;
  double log_rho_sum = 0.0;
};

// Re-simulates every shape at x0 with its current model and W. Returns nullopt
// if any path diverges.
std::optional<Proposal> simulate_all(const ChainState& st, const Vector& x0,
                                     const std::vector<const GuidedModel*>& models, int threads) {
  const std::size_t I = st.shapes.size();
  Proposal out;
  out.paths.resize(I);
  out.log_rho0.resize(I);
  std::vector<char> ok(I, 1);
  parallel_for(I, threads, [&](std::size_t i) {
    try {
      out.paths[i] = simulate_guided(*models[i], x0, st.shapes[i].W);
      out.log_rho0[i] = models[i]->tables.log_rho_tilde_initial<double>(x0);
    } catch (const NumericalError&) {
      ok[i] = 0;
    }
  });
  for (std::size_t i = 0; i < I; ++i) {
    if (!ok[i]) return std::nullopt;
    out.log_psi_sum += out.paths[i].log_psi;
    out.log_rho_sum += out.log_rho0[i];
  }
  if (!std::isfinite(out.log_psi_sum) || !std::isfinite(out.log_rho_sum)) return std::nullopt;
  return out;
}

std::vector<const GuidedModel*> current_models(const ChainState& st) {
  std::vector<const GuidedModel*> m;
  for (const ShapeState& s : st.shapes) m.push_back(&s.model);
  return m;
}

int g_threads = 1;  // worker count for the moves below, set by the drivers

}  // namespace

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, threads > 1 ? threads : 1);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

double log_normal_walk_correction(double theta, double theta_new) {
  return std::log(theta_new / theta);
}

double log_rmmala_proposal(const Vector& to, const Vector& from, const Vector& grad_from,
                           const Eigen::LLT<Matrix>& gram_from, double delta) {
  const Vector mean = from + 0.5 * delta * (gram_from.reconstructedMatrix() * grad_from);
  const Vector z = gram_from.matrixL().solve(to - mean);
  const double logdetK = 2.0 * gram_from.matrixLLT().diagonal().array().log().sum();
  const double dim = static_cast<double>(to.size());
  return -0.5 * z.squaredNorm() / delta - 0.5 * (dim * std::log(delta) + logdetK) -
         0.5 * dim * std::log(2.0 * std::numbers::pi);
}

void Priors::validate() const {
  if (!(pareto_scale > 0.0) || !(pareto_min > 0.0)) throw ConfigError("Pareto prior parameters must be positive");
  if (!(kappa_mom > 0.0) || !(kappa_pos > 0.0)) throw ConfigError("kappa_mom and kappa_pos must be positive");
}

double Priors::log_pareto(double a) const {
  if (!(a >= pareto_min)) return kNegInf;
  return std::log(pareto_scale) - 2.0 * std::log(a);
}

double Priors::log_momentum_prior(const Vector& p, const Eigen::LLT<Matrix>& gram) const {
  // covariance kappa K^{-1}, precision K / kappa
  const Vector Lt_p = gram.matrixU() * p;
  const double logdetK = 2.0 * gram.matrixLLT().diagonal().array().log().sum();
  const double dim = static_cast<double>(p.size());
  return -0.5 * Lt_p.squaredNorm() / kappa_mom + 0.5 * logdetK - 0.5 * dim * std::log(kappa_mom) -
         0.5 * dim * std::log(2.0 * std::numbers::pi);
}

double Priors::log_position_prior(const Vector& q) const {
  const double dim = static_cast<double>(q.size());
  return -0.5 * q.squaredNorm() / kappa_pos - 0.5 * dim * std::log(2.0 * std::numbers::pi * kappa_pos);
}

WienerPath sample_wiener(RandomStream& rng, const TimeGrid& grid, int dim) {
  WienerPath W;
  W.increments.resize(dim, grid.intervals());
  for (int k = 0; k < grid.intervals(); ++k) {
    const double s = std::sqrt(grid.step(k));
    for (int l = 0; l < dim; ++l) W.increments(l, k) = s * rng.normal();
  }
  return W;
}

double guided_objective(const GuidedModel& gm, const Vector& x0, const WienerPath& W) {
  return simulate_guided_generic<double>(gm, x0, W) + gm.tables.log_rho_tilde_initial<double>(x0);
}

Vector guided_objective_gradient(const GuidedModel& gm, const Vector& x0, const WienerPath& W,
                                 GradientBlock block) {
  const int nd = gm.spec.dims().nd();
  const int offset = block == GradientBlock::Positions ? 0 : nd;
  if (nd <= 4) return gradient_chunked<4>(gm, x0, W, offset, nd);
  if (nd <= 8) return gradient_chunked<8>(gm, x0, W, offset, nd);
  if (nd <= 16) return gradient_chunked<16>(gm, x0, W, offset, nd);
  return gradient_chunked<32>(gm, x0, W, offset, nd);
}

GuidedModel ProblemSetup::build(const LandmarkConfig& vT, double theta) const {
  const ModelSpec spec = base.with_kernel(kernel(theta));
  ObservationScheme obs = ObservationScheme::positions(spec.dims(), vT.q(), eps);
  obs.initial = initial;
  return make_guided_model(spec, vT, obs, grid);
}

Vector ChainState::x0() const {
  Vector x(dims.state());
  x << q0, p0;
  return x;
}

double ChainState::total_log_psi() const {
  double s = 0.0;
  for (const ShapeState& sh : shapes) s += sh.path.log_psi;
  return s;
}

double ChainState::total_log_rho0() const {
  double s = 0.0;
  for (const ShapeState& sh : shapes) s += sh.log_rho0;
  return s;
}

ChainState init_chain(const ProblemSetup& setup, const std::vector<LandmarkConfig>& observations,
                      const Vector& q0, const Vector& p0, double theta, std::uint64_t seed) {
  if (observations.empty()) throw ConfigError("at least one observed configuration is required");
  const Dims dims = setup.base.dims();
  for (const auto& o : observations)
    if (o.dims() != dims) throw ConfigError("observed configurations must share n and d");
  if (q0.size() != dims.nd() || p0.size() != dims.nd()) throw ConfigError("initial state has wrong length");
  ChainState st;
  st.dims = dims;
  st.theta = theta;
  st.q0 = q0;
  st.p0 = p0;
  const int wdim = wiener_dim(setup.base);
  const Vector x0 = st.x0();
  for (std::size_t i = 0; i < observations.size(); ++i) {
    RandomStream rng(seed, StreamPurpose::InitialWiener, i, 0);
    WienerPath W = sample_wiener(rng, setup.grid, wdim);
    GuidedModel gm = setup.build(observations[i], theta);
    GuidedPath path = simulate_guided(gm, x0, W);
    const double lr = gm.tables.log_rho_tilde_initial<double>(x0);
    st.shapes.push_back(ShapeState{observations[i], std::move(gm), std::move(W), std::move(path), lr});
  }
  return st;
}

bool metropolis_accept(double log_a, RandomStream& rng) {
  const double u = rng.uniform();
  if (std::isnan(log_a)) return false;
  return std::log(u) < log_a;
}

bool update_bridge_pcn(ChainState& st, std::size_t shape, double eta, RandomStream& rng) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("pCN persistence eta must lie in [0, 1]");
  ShapeState& sh = st.shapes.at(shape);
  const TimeGrid& grid = sh.model.tables.grid();
  const double rho = std::sqrt(1.0 - eta * eta);
  WienerPath Wc;
  Wc.increments.resize(sh.W.dim(), sh.W.intervals());
  for (int k = 0; k < sh.W.intervals(); ++k) {
    const double s = std::sqrt(grid.step(k));
    for (int l = 0; l < sh.W.dim(); ++l)
      Wc.increments(l, k) = eta * sh.W.increments(l, k) + rho * s * rng.normal();
  }
  GuidedPath path;
  try {
    path = simulate_guided(sh.model, st.x0(), Wc);
  } catch (const NumericalError&) {
    rng.uniform();  // keep the stream layout independent of the outcome
    return false;
  }
  if (!metropolis_accept(path.log_psi - sh.path.log_psi, rng)) return false;
  sh.W = std::move(Wc);
  sh.path = std::move(path);
  return true;
}

bool update_momenta_mala(ChainState& st, const Priors& priors, double delta, RandomStream& rng) {
  if (!(delta > 0.0)) throw ConfigError("MALA step delta must be positive");
  const int nd = st.dims.nd();
  Vector z(nd);
  for (int i = 0; i < nd; ++i) z[i] = rng.normal();
  const double u_log = std::log(rng.uniform());

  const Eigen::LLT<Matrix> gram =
      gram_cholesky(KernelParams{st.theta, st.shapes.front().model.spec.kernel().c}, st.dims, st.q0);
  const Vector x0 = st.x0();
  Vector grad;
  try {
    grad = summed_gradient(st, x0, GradientBlock::Momenta, g_threads);
  } catch (const NumericalError&) {
    return false;
  }
  const Vector p_new = st.p0 + 0.5 * delta * grad + std::sqrt(delta) * z;
  Vector x_new = x0;
  x_new.tail(nd) = p_new;

  const auto prop = simulate_all(st, x_new, current_models(st), g_threads);
  if (!prop) return false;
  Vector grad_new;
  try {
    grad_new = summed_gradient(st, x_new, GradientBlock::Momenta, g_threads);
  } catch (const NumericalError&) {
    return false;
  }
  const double fwd = -0.5 * (p_new - st.p0 - 0.5 * delta * grad).squaredNorm() / delta;
  const double bwd = -0.5 * (st.p0 - p_new - 0.5 * delta * grad_new).squaredNorm() / delta;
  double log_a = (prop->log_psi_sum - st.total_log_psi()) + (prop->log_rho_sum - st.total_log_rho0()) +
                 (bwd - fwd);
  if (st.momentum_prior)
    log_a += priors.log_momentum_prior(p_new, gram) - priors.log_momentum_prior(st.p0, gram);
  if (!(u_log < log_a)) return false;
  st.p0 = p_new;
  for (std::size_t i = 0; i < st.shapes.size(); ++i) {
    st.shapes[i].path = std::move(prop->paths[i]);
    st.shapes[i].log_rho0 = prop->log_rho0[i];
  }
  return true;
}

bool update_theta(ChainState& st, const ProblemSetup& setup, const Priors& priors,
                  double sigma_theta, RandomStream& rng) {
  if (!(sigma_theta > 0.0)) throw ConfigError("sigma_theta must be positive");
  const double theta_new = st.theta * std::exp(sigma_theta * rng.normal());
  const double u_log = std::log(rng.uniform());
  const double prior_new = priors.log_pareto(theta_new);
  if (prior_new == kNegInf) return false;

  const std::size_t I = st.shapes.size();
  std::vector<std::optional<GuidedModel>> models(I);
  std::vector<char> ok(I, 1);
  parallel_for(I, g_threads, [&](std::size_t i) {
    try {
      models[i].emplace(setup.build(st.shapes[i].vT, theta_new));
    } catch (const NumericalError&) {
      ok[i] = 0;
    }
  });
  std::vector<const GuidedModel*> ptrs;
  for (std::size_t i = 0; i < I; ++i) {
    if (!ok[i]) return false;
    ptrs.push_back(&*models[i]);
  }
  const Vector x0 = st.x0();
  const auto prop = simulate_all(st, x0, ptrs, g_threads);
  if (!prop) return false;

  double log_a = (prop->log_psi_sum - st.total_log_psi()) + (prop->log_rho_sum - st.total_log_rho0()) +
                 (prior_new - priors.log_pareto(st.theta)) + log_normal_walk_correction(st.theta, theta_new);
  if (st.momentum_prior) {
    // the momentum prior N(0, kappa K_theta(q0)^{-1}) depends on theta
    try {
      const double c = setup.base.kernel().c;
      const auto g_new = gram_cholesky(KernelParams{theta_new, c}, st.dims, st.q0, setup.gram_jitter);
      const auto g_old = gram_cholesky(KernelParams{st.theta, c}, st.dims, st.q0, setup.gram_jitter);
      log_a += priors.log_momentum_prior(st.p0, g_new) - priors.log_momentum_prior(st.p0, g_old);
    } catch (const NumericalError&) {
      return false;
    }
  }
  if (!(u_log < log_a)) return false;
  st.theta = theta_new;
  for (std::size_t i = 0; i < I; ++i) {
    st.shapes[i].model = std::move(*models[i]);
    st.shapes[i].path = std::move(prop->paths[i]);
    st.shapes[i].log_rho0 = prop->log_rho0[i];
  }
  return true;
}

bool update_template_rmmala(ChainState& st, const ProblemSetup& setup, const Priors& priors,
                            double delta, RandomStream& rng) {
  if (!(delta > 0.0)) throw ConfigError("RMMALA step delta must be positive");
  const int nd = st.dims.nd();
  Vector xi(nd);
  for (int i = 0; i < nd; ++i) xi[i] = rng.normal();
  const double u_log = std::log(rng.uniform());

  const KernelParams kp = setup.kernel(st.theta);
  Eigen::LLT<Matrix> gram_old;
  try {
    gram_old = gram_cholesky(kp, st.dims, st.q0, setup.gram_jitter);
  } catch (const NumericalError&) {
    return false;
  }
  const Vector x0 = st.x0();
  Vector grad;
  try {
    grad = summed_gradient(st, x0, GradientBlock::Positions, g_threads);
  } catch (const NumericalError&) {
    return false;
  }
  const Vector mean_fwd = st.q0 + 0.5 * delta * (gram_old.reconstructedMatrix() * grad);
  const Vector q_new = mean_fwd + std::sqrt(delta) * Vector(gram_old.matrixL() * xi);

  if (!(min_pairwise_distance(st.dims, q_new) >= 1e-8 * kp.a)) return false;
  Eigen::LLT<Matrix> gram_new;
  try {
    gram_new = gram_cholesky(kp, st.dims, q_new, setup.gram_jitter);
  } catch (const NumericalError&) {
    return false;
  }
  Vector x_new = x0;
  x_new.head(nd) = q_new;
  const auto prop = simulate_all(st, x_new, current_models(st), g_threads);
  if (!prop) return false;
  Vector grad_new;
  try {
    grad_new = summed_gradient(st, x_new, GradientBlock::Positions, g_threads);
  } catch (const NumericalError&) {
    return false;
  }
  const double fwd = log_rmmala_proposal(q_new, st.q0, grad, gram_old, delta);
  const double bwd = log_rmmala_proposal(st.q0, q_new, grad_new, gram_new, delta);
  const double log_a = (prop->log_psi_sum - st.total_log_psi()) +
                       (prop->log_rho_sum - st.total_log_rho0()) +
                       (priors.log_position_prior(q_new) - priors.log_position_prior(st.q0)) +
                       (bwd - fwd);
  if (!(u_log < log_a)) return false;
  st.q0 = q_new;
  for (std::size_t i = 0; i < st.shapes.size(); ++i) {
    st.shapes[i].path = std::move(prop->paths[i]);
    st.shapes[i].log_rho0 = prop->log_rho0[i];
  }
  return true;
}

bool cache_is_coherent(const ChainState& st) {
  const Vector x0 = st.x0();
  for (const ShapeState& sh : st.shapes) {
    const GuidedPath p = simulate_guided(sh.model, x0, sh.W);
    if (p.log_psi != sh.path.log_psi) return false;
    if (sh.model.tables.log_rho_tilde_initial<double>(x0) != sh.log_rho0) return false;
  }
  return true;
}

namespace {

// Window-based scaling of a step size toward 50% acceptance.
struct Adapter {
  static constexpr int kWindow = 25;
  std::int64_t last_prop = 0, last_acc = 0;
  void maybe_adapt(const MoveStats& s, double& step, double lo, double hi) {
    if (s.proposed - last_prop < kWindow) return;
    const double rate = static_cast<double>(s.accepted - last_acc) / (s.proposed - last_prop);
    step = std::clamp(step * std::exp(2.0 * (rate - 0.5)), lo, hi);
    last_prop = s.proposed;
    last_acc = s.accepted;
  }
};

void validate_settings(const ChainSettings& s) {
  if (s.iterations < 1) throw ConfigError("iterations must be at least 1");
  if (s.save_every < 1 || s.trace_every < 1) throw ConfigError("save_every and trace_every must be positive");
  s.priors.validate();
}

}  // namespace

MatchingOutput run_matching(const ProblemSetup& setup, const ChainSettings& settings,
                            const LandmarkConfig& v0, const LandmarkConfig& vT, double theta0,
                            const IterationObserver& observer) {
  validate_settings(settings);
  if (v0.dims() != vT.dims()) throw ConfigError("v0 and vT must have the same n and d");
  g_threads = settings.threads;
  Tuning tun = settings.tuning;
  const Dims dims = v0.dims();
  ChainState st = init_chain(setup, {vT}, v0.q(), Vector::Zero(dims.nd()), theta0, settings.seed);
  st.momentum_prior = true;

  MatchingOutput out;
  Adapter ad_mala, ad_theta;
  const int adapt_until = settings.adapt ? settings.iterations / 5 : 0;
  auto record = [&](int it) {
    if (it % settings.save_every == 0 || it == settings.iterations) {
      out.saved_iterations.push_back(it);
      out.saved_paths.push_back(st.shapes.front().path);
    }
    if (it % settings.trace_every == 0 || it == settings.iterations)
      out.momenta.push_back({it, st.p0, st.shapes.front().path.states.back().tail(dims.nd())});
    out.thetas.push_back({it, st.theta, st.total_log_psi()});
  };
  record(0);
  for (int it = 1; it <= settings.iterations; ++it) {
    {
      RandomStream rng(settings.seed, StreamPurpose::BridgeUpdate, 0, it);
      st.bridge.record(update_bridge_pcn(st, 0, tun.eta, rng));
    }
    {
      RandomStream rng(settings.seed, StreamPurpose::MomentumUpdate, 0, it);
      st.momenta.record(update_momenta_mala(st, settings.priors, tun.delta_mala, rng));
    }
    if (!settings.fix_theta) {
      RandomStream rng(settings.seed, StreamPurpose::ThetaUpdate, 0, it);
      st.theta_moves.record(update_theta(st, setup, settings.priors, tun.sigma_theta, rng));
    }
    if (it <= adapt_until) {
      ad_mala.maybe_adapt(st.momenta, tun.delta_mala, 1e-8, 10.0);
      if (!settings.fix_theta) ad_theta.maybe_adapt(st.theta_moves, tun.sigma_theta, 1e-4, 2.0);
    }
    record(it);
    if (observer) observer(it, st);
  }
  out.bridge = st.bridge;
  out.momenta_moves = st.momenta;
  out.theta_moves = st.theta_moves;
  out.final_tuning = tun;
  return out;
}

TemplateOutput run_template(const ProblemSetup& setup, const ChainSettings& settings,
                            const std::vector<LandmarkConfig>& shapes, const Vector& q0_init,
                            double theta0, const IterationObserver& observer) {
  validate_settings(settings);
  if (shapes.empty()) throw ConfigError("template estimation needs at least one shape");
  g_threads = settings.threads;
  Tuning tun = settings.tuning;
  const Dims dims = shapes.front().dims();
  ChainState st = init_chain(setup, shapes, q0_init, Vector::Zero(dims.nd()), theta0, settings.seed);
  st.momentum_prior = false;

  TemplateOutput out;
  Adapter ad_tmpl, ad_theta;
  const int adapt_until = settings.adapt ? settings.iterations / 5 : 0;
  auto record = [&](int it) {
    if (it % settings.save_every == 0 || it == settings.iterations) out.templates.push_back({it, st.q0});
    out.thetas.push_back({it, st.theta, st.total_log_psi()});
  };
  record(0);
  const std::size_t I = shapes.size();
  for (int it = 1; it <= settings.iterations; ++it) {
    std::vector<char> acc(I, 0);
    parallel_for(I, settings.threads, [&](std::size_t i) {
      RandomStream rng(settings.seed, StreamPurpose::BridgeUpdate, i, it);
      acc[i] = update_bridge_pcn(st, i, tun.eta, rng) ? 1 : 0;
    });
    for (std::size_t i = 0; i < I; ++i) st.bridge.record(acc[i] != 0);
    if (!settings.fix_theta) {
      RandomStream rng(settings.seed, StreamPurpose::ThetaUpdate, 0, it);
      st.theta_moves.record(update_theta(st, setup, settings.priors, tun.sigma_theta, rng));
    }
    {
      RandomStream rng(settings.seed, StreamPurpose::TemplateUpdate, 0, it);
      st.tmpl.record(update_template_rmmala(st, setup, settings.priors, tun.delta_rmmala, rng));
    }
    if (it <= adapt_until) {
      ad_tmpl.maybe_adapt(st.tmpl, tun.delta_rmmala, 1e-10, 1.0);
      if (!settings.fix_theta) ad_theta.maybe_adapt(st.theta_moves, tun.sigma_theta, 1e-4, 2.0);
    }
    record(it);
    if (observer) observer(it, st);
  }
  out.bridge = st.bridge;
  out.theta_moves = st.theta_moves;
  out.template_moves = st.tmpl;
  out.final_tuning = tun;
  return out;
}

}  // namespace bridgemark
