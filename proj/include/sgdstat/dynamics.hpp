#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "sgdstat/kernels.hpp"
#include "sgdstat/problem.hpp"

namespace sgdstat::dynamics {

using Rng = std::mt19937_64;

inline constexpr double kDivergenceThreshold = 1e12;

std::uint64_t splitmix64(std::uint64_t x);
// splitmix64(master + φ·(index + 1)), φ the 64-bit golden-ratio constant.
std::uint64_t chain_seed(std::uint64_t master_seed, std::uint64_t chain_index);

// Per-chain noise generator. Owns its RNG state.
class NoiseStream {
 public:
  virtual ~NoiseStream() = default;
  // True when draw() reads w (state-dependent noise).
  virtual bool needs_state() const { return false; }
  // w and eta hold dim contiguous values; w is in shifted coordinates.
  virtual void draw(const double* w, double* eta) = 0;
};

// Immutable noise description shared by all chains of an ensemble.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual Index dim() const = 0;
  virtual std::unique_ptr<NoiseStream> stream(std::uint64_t seed) const = 0;
};

enum class SampleLaw { Gaussian, StudentT, ChiSquared };

// η = F z with F = C^{1/2} and z of iid unit-variance components.
class NoiseSampler final : public NoiseSource {
 public:
  // StateDependent specs need sigma (the Σ at which C = cKΣK is frozen).
  NoiseSampler(const NoiseSpec& spec, const QuadraticProblem& problem,
               const SymMatrix* sigma = nullptr);
  NoiseSampler(SymMatrix covariance, SampleLaw law = SampleLaw::Gaussian, double dof = 0.0);

  Index dim() const override { return covariance_.dim(); }
  std::unique_ptr<NoiseStream> stream(std::uint64_t seed) const override;

  const SymMatrix& covariance() const { return covariance_; }
  const Matrix& factor() const { return factor_; }
  SampleLaw law() const { return law_; }
  double dof() const { return dof_; }

 private:
  void init();
  SymMatrix covariance_;
  Matrix factor_;
  SampleLaw law_ = SampleLaw::Gaussian;
  double dof_ = 0.0;
  bool zero_ = false;
};

// One draw with fresh distribution objects.
Vector sample_noise(const NoiseSampler& sampler, Rng& rng);

struct ChainState {
  Vector w;
  Vector m;
  long step = 0;
  bool diverged = false;
};

ChainState initial_state(Index dim, const Vector* w0 = nullptr);

// Generalized update: g = Kw + η, m ← μm + βg, w ← w − P[(1−ν)g + νm].
struct UpdateRule {
  Matrix precond;
  double momentum = 0.0;
  double gain = 1.0;
  double nu = 1.0;
};

// DNM with a scalar lr uses λK⁻¹; NGD and ADAM need an explicit preconditioner.
UpdateRule update_rule(const QuadraticProblem& problem, const OptimizerSpec& optimizer);
// Transition matrix of (w, m) for the noiseless update.
Matrix transition_matrix(const QuadraticProblem& problem, const UpdateRule& rule);
// max(1000, ⌈20/margin⌉, ⌈20/(1 − ρ(T))⌉); margin from the scalar/matrix stability check.
long default_steps(const QuadraticProblem& problem, const OptimizerSpec& optimizer);

ChainState step(const ChainState& state, const QuadraticProblem& problem,
                const OptimizerSpec& optimizer, const Vector& noise);

struct TrajectoryPoint {
  std::size_t chain = 0;
  long step = 0;
  Vector w;
};

struct ChainRun {
  ChainState final;
  std::vector<TrajectoryPoint> trajectory;
};

ChainRun run_chain(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                   const NoiseSource& noise, long n_steps, std::uint64_t seed,
                   long record_every = 0, const Vector* w0 = nullptr);
ChainRun run_chain(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                   const NoiseSpec& noise, long n_steps, std::uint64_t seed, long record_every = 0,
                   const Vector* w0 = nullptr);

struct EnsembleOptions {
  std::size_t n_chains = 10000;
  long n_steps = 1000;
  std::uint64_t master_seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency
  std::optional<Vector> initial;
  long record_every = 0;  // trajectory rows for every chain at multiples of this step
  kernels::Isa isa = kernels::best_isa();
  double divergence_threshold = kDivergenceThreshold;
  // When false, an ensemble with fewer than two surviving chains returns
  // stats with valid = false instead of throwing EmptyEnsembleError.
  bool throw_on_empty = true;
};

struct EnsembleStats {
  std::size_t n_chains = 0;
  long n_steps = 0;
  Vector empirical_mean;
  SymMatrix empirical_cov = SymMatrix::zero(1);
  std::size_t n_diverged = 0;
  std::uint64_t master_seed = 0;
  bool valid = true;
};

struct EnsembleResult {
  EnsembleStats stats;
  Matrix final_states;            // n_chains × D, shifted coordinates; zero rows if diverged
  std::vector<char> diverged;     // per chain
  std::vector<TrajectoryPoint> trajectory;
};

// Statistics over the non-diverged rows. Throws EmptyEnsembleError when fewer
// than two chains survive.
EnsembleStats summarize(const Matrix& final_states, const std::vector<char>& diverged,
                        long n_steps, std::uint64_t master_seed);

EnsembleResult run_ensemble(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                            const NoiseSource& noise, const EnsembleOptions& options);
EnsembleStats run_ensemble(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                           const NoiseSpec& noise, std::size_t n_chains, long n_steps,
                           std::uint64_t master_seed, unsigned threads = 0);

struct EscapeCurve {
  std::vector<long> t;
  std::vector<double> mean;      // E[L(w_t) − L(w_0)]
  std::vector<double> std_error;
};

// Plain SGD from w₀ = 0, t = 0..t_max.
EscapeCurve escape_efficiency_empirical(const QuadraticProblem& problem, const SymMatrix& c,
                                        double lr, long t_max, std::size_t n_runs,
                                        std::uint64_t master_seed, unsigned threads = 0,
                                        kernels::Isa isa = kernels::best_isa());

// Canonical double well L = r(w² − 1)²: minima ±1, barrier 0, ΔL = r, k_a = 8r, k_b = −4r.
struct DoubleWell {
  static constexpr double kCurvatureMin = 8.0;
  static constexpr double kCurvatureBarrier = -4.0;
  static constexpr double kBarrierHeight = 1.0;
};

struct EscapeMeasurement {
  double rate = 0.0;          // escapes per unit observed time
  double mean_passage = 0.0;  // over escaped runs
  double rate_std_error = 0.0;
  std::size_t n_escaped = 0;
  std::size_t n_censored = 0;
  bool censored = false;
};

// SGD from w = −1 with noise variance r·k_a/S; first passage is the first step
// with w ≥ 0. Censored runs contribute t_limit to the exposure.
EscapeMeasurement double_well_escape_experiment(double r, double lr, double batch,
                                                std::size_t n_runs, long t_limit,
                                                std::uint64_t master_seed, unsigned threads = 0,
                                                kernels::Isa isa = kernels::best_isa());

unsigned resolve_threads(unsigned requested);

}  // namespace sgdstat::dynamics
