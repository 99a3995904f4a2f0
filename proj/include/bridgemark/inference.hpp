#pragma once

// MCMC on (W, p0, theta) for landmark matching and on (W^1..W^I, theta, q0)
// for template estimation. The guided-proposal map GP_theta(x0, W) is kept
// deterministic so that every move acts on Wiener increments, initial state or
// kernel parameter and re-simulates the affected paths.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "bridgemark/guiding.hpp"
#include "bridgemark/rng.hpp"

namespace bridgemark {

struct Priors {
  // p(a) = scale * a^{-2} on [min, inf); a proper density when scale == min
  double pareto_scale = 0.1;
  double pareto_min = 0.1;
  double kappa_mom = 100.0;  // p0 ~ N(0, kappa_mom K(q0)^{-1})
  double kappa_pos = 100.0;  // q0_i ~ N(0, kappa_pos I)

  void validate() const;
  /// -inf outside the support.
  double log_pareto(double a) const;
  /// Log density of N(0, kappa_mom K^{-1}) at p, given the Cholesky factor of K.
  double log_momentum_prior(const Vector& p, const Eigen::LLT<Matrix>& gram) const;
  double log_position_prior(const Vector& q) const;
};

struct Tuning {
  double eta = 0.9;            // pCN persistence
  double delta_mala = 0.01;    // momentum MALA step
  double delta_rmmala = 0.001; // template RMMALA step
  double sigma_theta = 0.1;    // log-normal random walk scale
};

WienerPath sample_wiener(RandomStream& rng, const TimeGrid& grid, int dim);

/// Which block of x0 = [q; p] a gradient is taken with respect to.
enum class GradientBlock { Positions, Momenta };

/// log Psi(GP(x0, W)) + log rho~(0, x0) for one shape.
double guided_objective(const GuidedModel& gm, const Vector& x0, const WienerPath& W);

/// Gradient of guided_objective with respect to one block of x0, by forward-mode
/// differentiation of the complete Euler-Maruyama map (chunks of dual
/// directions). Exact up to rounding. Throws NumericalError on divergence.
Vector guided_objective_gradient(const GuidedModel& gm, const Vector& x0, const WienerPath& W,
                                 GradientBlock block);

/// Everything that fixes the guided models apart from theta.
struct ProblemSetup {
  ModelSpec base;  // its kernel length scale is overwritten by theta
  TimeGrid grid;
  double eps = 0.01;
  double gram_jitter = 0.0;
  std::optional<InitialObservation> initial;  // time-0 observation, off by default

  GuidedModel build(const LandmarkConfig& vT, double theta) const;
  KernelParams kernel(double theta) const { return KernelParams{theta, base.kernel().c}; }
};

struct ShapeState {
  LandmarkConfig vT;
  GuidedModel model;
  WienerPath W;
  GuidedPath path;
  double log_rho0 = 0.0;
};

struct MoveStats {
  std::int64_t proposed = 0;
  std::int64_t accepted = 0;
  double rate() const { return proposed ? static_cast<double>(accepted) / proposed : 0.0; }
  void record(bool acc) {
    ++proposed;
    accepted += acc ? 1 : 0;
  }
};

struct ChainState {
  Dims dims;
  double theta = 1.0;
  Vector q0;
  Vector p0;
  std::vector<ShapeState> shapes;
  bool momentum_prior = true;  // matching mode puts N(0, kappa K^{-1}) on p0

  MoveStats bridge, momenta, theta_moves, tmpl;

  Vector x0() const;
  double total_log_psi() const;
  double total_log_rho0() const;
};

/// Fresh Wiener paths (stream InitialWiener) and guided paths at x0.
ChainState init_chain(const ProblemSetup& setup, const std::vector<LandmarkConfig>& observations,
                      const Vector& q0, const Vector& p0, double theta, std::uint64_t seed);

/// log q(theta | theta_new) - log q(theta_new | theta) for the log-normal random
/// walk theta_new = theta exp(sigma Z); equals log(theta_new / theta).
double log_normal_walk_correction(double theta, double theta_new);

/// log N(to; from + delta K grad_from / 2, delta K) with K given by its Cholesky factor.
double log_rmmala_proposal(const Vector& to, const Vector& from, const Vector& grad_from,
                           const Eigen::LLT<Matrix>& gram_from, double delta);

/// Accept with probability min(1, exp(log_a)); NaN counts as rejection.
bool metropolis_accept(double log_a, RandomStream& rng);

// pCN update of W for one shape.
bool update_bridge_pcn(ChainState& st, std::size_t shape, double eta, RandomStream& rng);

// MALA update of p0 with gradients of log Psi + log rho~ (summed over shapes).
bool update_momenta_mala(ChainState& st, const Priors& priors, double delta, RandomStream& rng);

// Log-normal random walk on the kernel length scale.
bool update_theta(ChainState& st, const ProblemSetup& setup, const Priors& priors,
                  double sigma_theta, RandomStream& rng);

// Riemannian-manifold MALA on q0 preconditioned by K(q0).
bool update_template_rmmala(ChainState& st, const ProblemSetup& setup, const Priors& priors,
                            double delta, RandomStream& rng);

/// Re-simulates every cached path from (x0, W, theta) and compares log Psi bitwise.
bool cache_is_coherent(const ChainState& st);

struct ChainSettings {
  Tuning tuning;
  Priors priors;
  int iterations = 1000;
  int save_every = 100;
  int trace_every = 10;
  std::uint64_t seed = 1;
  bool fix_theta = false;
  bool adapt = false;  // scale step sizes during the first 20% of iterations
  int threads = 1;
};

using IterationObserver = std::function<void(int iteration, const ChainState&)>;

struct MomentaSample {
  int iteration;
  Vector p0;
  Vector pT;
};

struct ThetaSample {
  int iteration;
  double theta;
  double log_psi;
};

struct MatchingOutput {
  std::vector<int> saved_iterations;
  std::vector<GuidedPath> saved_paths;
  std::vector<MomentaSample> momenta;
  std::vector<ThetaSample> thetas;
  MoveStats bridge, momenta_moves, theta_moves;
  Tuning final_tuning;
};

/// Gibbs sampler cycling Algorithms 1, 2 and (unless theta is fixed) 3,
/// started from q0 = v0, p0 = 0.
MatchingOutput run_matching(const ProblemSetup& setup, const ChainSettings& settings,
                            const LandmarkConfig& v0, const LandmarkConfig& vT, double theta0,
                            const IterationObserver& observer = {});

struct TemplateSample {
  int iteration;
  Vector q0;
};

struct TemplateOutput {
  std::vector<TemplateSample> templates;
  std::vector<ThetaSample> thetas;
  MoveStats bridge, theta_moves, template_moves;
  Tuning final_tuning;
};

/// Gibbs sampler over (W^1..W^I, theta, q0) with p0 = 0: per-shape
/// concurrent pCN bridge updates, a random walk on theta using the summed
/// log-likelihoods, and RMMALA on q0.
TemplateOutput run_template(const ProblemSetup& setup, const ChainSettings& settings,
                            const std::vector<LandmarkConfig>& shapes, const Vector& q0_init,
                            double theta0, const IterationObserver& observer = {});

/// Runs fn(i) for i in [0, count) on up to `threads` worker threads.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace bridgemark
