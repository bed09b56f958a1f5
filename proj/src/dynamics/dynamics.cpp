#include "sgdstat/dynamics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "sgdstat/errors.hpp"
#include "sgdstat/stationary.hpp"

namespace sgdstat::dynamics {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t chain_seed(std::uint64_t master_seed, std::uint64_t chain_index) {
  return splitmix64(master_seed + 0x9E3779B97F4A7C15ull * (chain_index + 1));
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

namespace {

// Runs fn(item) for item in [0, n) on up to `threads` workers. The first
// exception is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t item = next.fetch_add(1);
      if (item >= n) return;
      try {
        fn(item);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
}

double unit_variance_draw(SampleLaw law, double dof, Rng& rng, std::normal_distribution<double>& nd,
                          std::student_t_distribution<double>& td,
                          std::chi_squared_distribution<double>& cd) {
  switch (law) {
    case SampleLaw::Gaussian: return nd(rng);
    case SampleLaw::StudentT: return td(rng) * std::sqrt((dof - 2.0) / dof);
    case SampleLaw::ChiSquared: return (cd(rng) - dof) / std::sqrt(2.0 * dof);
  }
  return 0.0;
}

class IidStream final : public NoiseStream {
 public:
  IidStream(const NoiseSampler& s, std::uint64_t seed, bool zero)
      : s_(s),
        rng_(seed),
        td_(s.law() == SampleLaw::StudentT ? s.dof() : 3.0),
        cd_(s.law() == SampleLaw::ChiSquared ? s.dof() : 1.0),
        z_(static_cast<std::size_t>(s.dim())),
        zero_(zero) {}

  void draw(const double*, double* eta) override {
    const Index d = s_.dim();
    if (zero_) {
      std::fill(eta, eta + d, 0.0);
      return;
    }
    for (Index i = 0; i < d; ++i) z_[i] = unit_variance_draw(s_.law(), s_.dof(), rng_, nd_, td_, cd_);
    const Matrix& f = s_.factor();
    for (Index i = 0; i < d; ++i) {
      double acc = 0.0;
      for (Index j = 0; j < d; ++j) acc += f(i, j) * z_[j];
      eta[i] = acc;
    }
  }

 private:
  const NoiseSampler& s_;
  Rng rng_;
  std::normal_distribution<double> nd_;
  std::student_t_distribution<double> td_;
  std::chi_squared_distribution<double> cd_;
  std::vector<double> z_;
  bool zero_;
};

SampleLaw law_of(const NoiseSpec& spec) {
  switch (spec.kind) {
    case NoiseKind::StudentT: return SampleLaw::StudentT;
    case NoiseKind::ChiSquared: return SampleLaw::ChiSquared;
    default: return SampleLaw::Gaussian;
  }
}

}  // namespace

NoiseSampler::NoiseSampler(const NoiseSpec& spec, const QuadraticProblem& problem,
                           const SymMatrix* sigma)
    : covariance_(spec.covariance_for(problem, sigma)), law_(law_of(spec)), dof_(spec.dof) {
  init();
}

NoiseSampler::NoiseSampler(SymMatrix covariance, SampleLaw law, double dof)
    : covariance_(std::move(covariance)), law_(law), dof_(dof) {
  init();
}

void NoiseSampler::init() {
  if (law_ == SampleLaw::StudentT && !(dof_ > 2.0)) {
    throw PreconditionError("student_t noise needs dof > 2 (variance is infinite otherwise)");
  }
  if (law_ == SampleLaw::ChiSquared && !(dof_ > 0.0)) {
    throw PreconditionError("chi_squared noise needs dof > 0");
  }
  factor_ = linalg::spd_sqrt(covariance_).matrix();
  zero_ = covariance_.norm() == 0.0;
}

std::unique_ptr<NoiseStream> NoiseSampler::stream(std::uint64_t seed) const {
  return std::make_unique<IidStream>(*this, seed, zero_);
}

Vector sample_noise(const NoiseSampler& sampler, Rng& rng) {
  std::normal_distribution<double> nd;
  std::student_t_distribution<double> td(sampler.law() == SampleLaw::StudentT ? sampler.dof() : 3.0);
  std::chi_squared_distribution<double> cd(sampler.law() == SampleLaw::ChiSquared ? sampler.dof()
                                                                                   : 1.0);
  Vector z(sampler.dim());
  for (Index i = 0; i < z.size(); ++i) {
    z(i) = unit_variance_draw(sampler.law(), sampler.dof(), rng, nd, td, cd);
  }
  return sampler.factor() * z;
}

ChainState initial_state(Index dim, const Vector* w0) {
  ChainState s;
  s.w = w0 ? *w0 : Vector::Zero(dim);
  if (s.w.size() != dim) throw PreconditionError("initial state dimension mismatch");
  s.m = Vector::Zero(dim);
  return s;
}

UpdateRule update_rule(const QuadraticProblem& problem, const OptimizerSpec& optimizer) {
  optimizer.validate();
  const Index d = problem.dim();
  UpdateRule r;
  r.momentum = optimizer.momentum;
  r.gain = 1.0;
  r.nu = 1.0;
  if (optimizer.preconditioner) {
    r.precond = optimizer.rate_matrix(d).matrix();
  } else if (optimizer.kind == OptimizerKind::Dnm) {
    r.precond = (linalg::spd_inverse(problem.hessian()) * *optimizer.lr).matrix();
  } else if (optimizer.kind == OptimizerKind::Ngd || optimizer.kind == OptimizerKind::Adam) {
    throw PreconditionError(std::string(to_string(optimizer.kind)) +
                            " simulation needs an explicit (idealized) preconditioner");
  } else {
    r.precond = *optimizer.lr * Matrix::Identity(d, d);
  }
  if (optimizer.kind == OptimizerKind::Qhm) {
    r.gain = 1.0 - optimizer.momentum;
    r.nu = optimizer.qhm_nu;
  }
  return r;
}

Matrix transition_matrix(const QuadraticProblem& problem, const UpdateRule& rule) {
  const Index d = problem.dim();
  const Matrix& k = problem.hessian().matrix();
  const double c = 1.0 - rule.nu + rule.nu * rule.gain;
  Matrix t(2 * d, 2 * d);
  t.topLeftCorner(d, d) = Matrix::Identity(d, d) - c * rule.precond * k;
  t.topRightCorner(d, d) = -rule.nu * rule.momentum * rule.precond;
  t.bottomLeftCorner(d, d) = rule.gain * k;
  t.bottomRightCorner(d, d) = rule.momentum * Matrix::Identity(d, d);
  return t;
}

long default_steps(const QuadraticProblem& problem, const OptimizerSpec& optimizer) {
  UpdateRule rule = update_rule(problem, optimizer);
  double margin;
  if (optimizer.kind == OptimizerKind::Qhm) {
    margin = stationary::qhm_stability_check(problem, *optimizer.lr, optimizer.momentum,
                                             optimizer.qhm_nu)
                 .margin;
  } else {
    margin = stationary::stability_check(problem, SymMatrix::symmetrize(rule.precond),
                                         optimizer.momentum)
                 .margin;
  }
  double rho = linalg::spectral_radius(transition_matrix(problem, rule));
  double steps = 1000.0;
  if (margin > 0.0) steps = std::max(steps, std::ceil(20.0 / margin));
  if (rho < 1.0) steps = std::max(steps, std::ceil(20.0 / (1.0 - rho)));
  return static_cast<long>(std::min(steps, 1e9));
}

ChainState step(const ChainState& state, const QuadraticProblem& problem,
                const OptimizerSpec& optimizer, const Vector& noise) {
  if (state.diverged) return state;
  UpdateRule r = update_rule(problem, optimizer);
  ChainState next = state;
  Vector g = problem.hessian().matrix() * state.w + noise;
  next.m = r.momentum * state.m + r.gain * g;
  Vector d = (1.0 - r.nu) * g + r.nu * next.m;
  next.w = state.w - r.precond * d;
  next.step = state.step + 1;
  if (!(next.w.norm() <= kDivergenceThreshold)) next.diverged = true;
  return next;
}

namespace {

// Lane-major state of up to kBlockLanes chains advanced together.
class LinearBlock {
 public:
  LinearBlock(const kernels::KernelTable& kt, const QuadraticProblem& problem,
              const UpdateRule& rule, const NoiseSource& noise, std::size_t count,
              const std::function<std::uint64_t(std::size_t)>& seed_of, const Vector& w0,
              double threshold)
      : kt_(kt),
        dim_(static_cast<std::size_t>(problem.dim())),
        count_(count),
        stride_(kernels::kBlockLanes),
        threshold2_(threshold * threshold),
        hessian_(dim_ * dim_),
        precond_(dim_ * dim_),
        w_(dim_ * stride_, 0.0),
        m_(dim_ * stride_, 0.0),
        eta_(dim_ * stride_, 0.0),
        g_(dim_ * stride_, 0.0),
        d_(dim_ * stride_, 0.0),
        norm2_(stride_, 0.0),
        wbuf_(dim_),
        ebuf_(dim_),
        diverged_(count, 0) {
    for (std::size_t i = 0; i < dim_; ++i) {
      for (std::size_t j = 0; j < dim_; ++j) {
        hessian_[i * dim_ + j] = problem.hessian()(i, j);
        precond_[i * dim_ + j] = rule.precond(i, j);
      }
    }
    step_.dim = dim_;
    step_.hessian = hessian_.data();
    step_.precond = precond_.data();
    step_.momentum = rule.momentum;
    step_.gain = rule.gain;
    step_.nu = rule.nu;
    streams_.reserve(count);
    for (std::size_t lane = 0; lane < count; ++lane) {
      streams_.push_back(noise.stream(seed_of(lane)));
      for (std::size_t i = 0; i < dim_; ++i) w_[i * stride_ + lane] = w0(i);
    }
  }

  void advance() {
    for (std::size_t lane = 0; lane < count_; ++lane) {
      if (diverged_[lane]) {
        for (std::size_t i = 0; i < dim_; ++i) eta_[i * stride_ + lane] = 0.0;
        continue;
      }
      if (streams_[lane]->needs_state()) {
        for (std::size_t i = 0; i < dim_; ++i) wbuf_[i] = w_[i * stride_ + lane];
      }
      streams_[lane]->draw(wbuf_.data(), ebuf_.data());
      for (std::size_t i = 0; i < dim_; ++i) eta_[i * stride_ + lane] = ebuf_[i];
    }
    kernels::Lanes l{w_.data(), m_.data(), eta_.data(), g_.data(), d_.data(), count_, stride_};
    kt_.linear_step(step_, l);
    kt_.squared_norm(dim_, w_.data(), count_, stride_, norm2_.data());
    for (std::size_t lane = 0; lane < count_; ++lane) {
      if (diverged_[lane]) continue;
      if (!(norm2_[lane] <= threshold2_)) {
        diverged_[lane] = 1;
        for (std::size_t i = 0; i < dim_; ++i) {
          w_[i * stride_ + lane] = 0.0;
          m_[i * stride_ + lane] = 0.0;
        }
      }
    }
  }

  void quadratic_form(double* out) const {
    kt_.quadratic_form(dim_, hessian_.data(), w_.data(), count_, stride_, out);
  }

  double w(std::size_t lane, std::size_t i) const { return w_[i * stride_ + lane]; }
  double m(std::size_t lane, std::size_t i) const { return m_[i * stride_ + lane]; }
  bool diverged(std::size_t lane) const { return diverged_[lane] != 0; }
  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }

 private:
  const kernels::KernelTable& kt_;
  std::size_t dim_, count_, stride_;
  double threshold2_;
  std::vector<double> hessian_, precond_, w_, m_, eta_, g_, d_, norm2_, wbuf_, ebuf_;
  std::vector<char> diverged_;
  std::vector<std::unique_ptr<NoiseStream>> streams_;
  kernels::LinearStep step_;
};

Vector shifted_initial(const QuadraticProblem& problem, const std::optional<Vector>& initial) {
  if (!initial) return Vector::Zero(problem.dim());
  if (initial->size() != problem.dim()) throw PreconditionError("initial w dimension mismatch");
  return *initial;
}

void record(const LinearBlock& b, std::size_t first_chain, long t, std::vector<TrajectoryPoint>& out) {
  for (std::size_t lane = 0; lane < b.count(); ++lane) {
    TrajectoryPoint p;
    p.chain = first_chain + lane;
    p.step = t;
    p.w.resize(static_cast<Index>(b.dim()));
    for (std::size_t i = 0; i < b.dim(); ++i) p.w(static_cast<Index>(i)) = b.w(lane, i);
    out.push_back(std::move(p));
  }
}

}  // namespace

ChainRun run_chain(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                   const NoiseSource& noise, long n_steps, std::uint64_t seed, long record_every,
                   const Vector* w0) {
  if (n_steps < 1) throw PreconditionError("run_chain: n_steps must be >= 1");
  if (noise.dim() != problem.dim()) throw PreconditionError("noise dimension mismatch");
  UpdateRule rule = update_rule(problem, optimizer);
  Vector start = w0 ? *w0 : Vector::Zero(problem.dim());
  if (start.size() != problem.dim()) throw PreconditionError("initial w dimension mismatch");
  LinearBlock b(kernels::active_kernels(), problem, rule, noise, 1,
                [seed](std::size_t) { return seed; }, start, kDivergenceThreshold);
  ChainRun out;
  if (record_every > 0) record(b, 0, 0, out.trajectory);
  for (long t = 1; t <= n_steps; ++t) {
    b.advance();
    if (record_every > 0 && t % record_every == 0) record(b, 0, t, out.trajectory);
  }
  out.final = initial_state(problem.dim());
  for (std::size_t i = 0; i < b.dim(); ++i) {
    out.final.w(static_cast<Index>(i)) = b.w(0, i);
    out.final.m(static_cast<Index>(i)) = b.m(0, i);
  }
  out.final.step = n_steps;
  out.final.diverged = b.diverged(0);
  return out;
}

ChainRun run_chain(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                   const NoiseSpec& noise, long n_steps, std::uint64_t seed, long record_every,
                   const Vector* w0) {
  NoiseSampler sampler(noise, problem);
  return run_chain(problem, optimizer, sampler, n_steps, seed, record_every, w0);
}

EnsembleStats summarize(const Matrix& final_states, const std::vector<char>& diverged, long n_steps,
                        std::uint64_t master_seed) {
  const Index n = final_states.rows();
  const Index d = final_states.cols();
  EnsembleStats s;
  s.n_chains = static_cast<std::size_t>(n);
  s.n_steps = n_steps;
  s.master_seed = master_seed;
  s.n_diverged = static_cast<std::size_t>(std::count(diverged.begin(), diverged.end(), 1));
  const std::size_t ok = s.n_chains - s.n_diverged;
  if (ok < 2) {
    throw EmptyEnsembleError("ensemble has fewer than two non-diverged chains (" +
                             std::to_string(s.n_diverged) + " of " + std::to_string(n) +
                             " diverged)");
  }
  Vector mean = Vector::Zero(d);
  for (Index r = 0; r < n; ++r) {
    if (!diverged[r]) mean += final_states.row(r).transpose();
  }
  mean /= static_cast<double>(ok);
  Matrix cov = Matrix::Zero(d, d);
  for (Index r = 0; r < n; ++r) {
    if (diverged[r]) continue;
    Vector x = final_states.row(r).transpose() - mean;
    cov.noalias() += x * x.transpose();
  }
  cov /= static_cast<double>(ok - 1);
  s.empirical_mean = mean;
  s.empirical_cov = SymMatrix::symmetrize(cov);
  return s;
}

EnsembleResult run_ensemble(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                            const NoiseSource& noise, const EnsembleOptions& options) {
  if (options.n_chains < 2) throw PreconditionError("run_ensemble: n_chains must be >= 2");
  if (options.n_steps < 1) throw PreconditionError("run_ensemble: n_steps must be >= 1");
  if (noise.dim() != problem.dim()) throw PreconditionError("noise dimension mismatch");
  const UpdateRule rule = update_rule(problem, optimizer);
  const Vector w0 = shifted_initial(problem, options.initial);
  const auto& kt = kernels::kernels_for(options.isa);
  const std::size_t n = options.n_chains;
  const std::size_t lanes = kernels::kBlockLanes;
  const std::size_t n_blocks = (n + lanes - 1) / lanes;
  const Index d = problem.dim();

  EnsembleResult out;
  out.final_states = Matrix::Zero(static_cast<Index>(n), d);
  out.diverged.assign(n, 0);
  std::vector<std::vector<TrajectoryPoint>> traj(n_blocks);

  parallel_for(n_blocks, resolve_threads(options.threads), [&](std::size_t blk) {
    const std::size_t first = blk * lanes;
    const std::size_t count = std::min(lanes, n - first);
    LinearBlock b(kt, problem, rule, noise, count,
                  [&](std::size_t lane) { return chain_seed(options.master_seed, first + lane); },
                  w0, options.divergence_threshold);
    if (options.record_every > 0) record(b, first, 0, traj[blk]);
    for (long t = 1; t <= options.n_steps; ++t) {
      b.advance();
      if (options.record_every > 0 && t % options.record_every == 0) record(b, first, t, traj[blk]);
    }
    for (std::size_t lane = 0; lane < count; ++lane) {
      out.diverged[first + lane] = b.diverged(lane) ? 1 : 0;
      for (std::size_t i = 0; i < b.dim(); ++i) {
        out.final_states(static_cast<Index>(first + lane), static_cast<Index>(i)) = b.w(lane, i);
      }
    }
  });

  for (auto& v : traj) {
    std::stable_sort(v.begin(), v.end(), [](const TrajectoryPoint& a, const TrajectoryPoint& b) {
      return a.chain < b.chain;
    });
    for (auto& p : v) out.trajectory.push_back(std::move(p));
  }
  try {
    out.stats = summarize(out.final_states, out.diverged, options.n_steps, options.master_seed);
  } catch (const EmptyEnsembleError&) {
    if (options.throw_on_empty) throw;
    out.stats.n_chains = n;
    out.stats.n_steps = options.n_steps;
    out.stats.master_seed = options.master_seed;
    out.stats.n_diverged = static_cast<std::size_t>(std::count(out.diverged.begin(), out.diverged.end(), 1));
    out.stats.empirical_mean = Vector::Constant(d, std::nan(""));
    out.stats.empirical_cov = SymMatrix::zero(d);
    out.stats.valid = false;
  }
  return out;
}

EnsembleStats run_ensemble(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                           const NoiseSpec& noise, std::size_t n_chains, long n_steps,
                           std::uint64_t master_seed, unsigned threads) {
  NoiseSampler sampler(noise, problem);
  EnsembleOptions opt;
  opt.n_chains = n_chains;
  opt.n_steps = n_steps;
  opt.master_seed = master_seed;
  opt.threads = threads;
  return run_ensemble(problem, optimizer, sampler, opt).stats;
}

EscapeCurve escape_efficiency_empirical(const QuadraticProblem& problem, const SymMatrix& c,
                                        double lr, long t_max, std::size_t n_runs,
                                        std::uint64_t master_seed, unsigned threads,
                                        kernels::Isa isa) {
  if (t_max < 0) throw PreconditionError("escape efficiency: t_max must be >= 0");
  if (n_runs < 2) throw PreconditionError("escape efficiency: n_runs must be >= 2");
  if (!stationary::stability_check(problem, lr, 0.0).stable) {
    throw InstabilityError("escape efficiency: lr * k_max must be below 2");
  }
  const OptimizerSpec opt = OptimizerSpec::sgd(lr);
  const UpdateRule rule = update_rule(problem, opt);
  NoiseSampler sampler(c);
  const auto& kt = kernels::kernels_for(isa);
  const std::size_t lanes = kernels::kBlockLanes;
  const std::size_t n_blocks = (n_runs + lanes - 1) / lanes;
  const std::size_t n_t = static_cast<std::size_t>(t_max) + 1;
  std::vector<std::vector<double>> sums(n_blocks, std::vector<double>(n_t, 0.0));
  std::vector<std::vector<double>> sq(n_blocks, std::vector<double>(n_t, 0.0));
  const Vector w0 = Vector::Zero(problem.dim());

  parallel_for(n_blocks, resolve_threads(threads), [&](std::size_t blk) {
    const std::size_t first = blk * lanes;
    const std::size_t count = std::min(lanes, n_runs - first);
    LinearBlock b(kt, problem, rule, sampler, count,
                  [&](std::size_t lane) { return chain_seed(master_seed, first + lane); }, w0,
                  kDivergenceThreshold);
    std::vector<double> q(lanes);
    for (std::size_t t = 1; t < n_t; ++t) {
      b.advance();
      b.quadratic_form(q.data());
      double s = 0.0, s2 = 0.0;
      for (std::size_t lane = 0; lane < count; ++lane) {
        s += q[lane];
        s2 += q[lane] * q[lane];
      }
      sums[blk][t] = s;
      sq[blk][t] = s2;
    }
  });

  EscapeCurve curve;
  const double nn = static_cast<double>(n_runs);
  for (std::size_t t = 0; t < n_t; ++t) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t blk = 0; blk < n_blocks; ++blk) {
      s += sums[blk][t];
      s2 += sq[blk][t];
    }
    double mean = s / nn;
    double var = std::max(0.0, (s2 / nn - mean * mean) * nn / (nn - 1.0));
    curve.t.push_back(static_cast<long>(t));
    curve.mean.push_back(mean);
    curve.std_error.push_back(std::sqrt(var / nn));
  }
  return curve;
}

EscapeMeasurement double_well_escape_experiment(double r, double lr, double batch,
                                                std::size_t n_runs, long t_limit,
                                                std::uint64_t master_seed, unsigned threads,
                                                kernels::Isa isa) {
  if (!(r > 0.0) || !(lr > 0.0) || !(batch > 0.0)) {
    throw PreconditionError("double well: r, lr and S must be positive");
  }
  if (!(r * lr * DoubleWell::kCurvatureMin < 2.0)) {
    throw InstabilityError("double well: r * lr * k_a must be below 2");
  }
  if (n_runs < 1 || t_limit < 1) throw PreconditionError("double well: need n_runs, t_limit >= 1");
  const double sd = std::sqrt(r * DoubleWell::kCurvatureMin / batch);
  const auto& kt = kernels::kernels_for(isa);
  const std::size_t lanes = kernels::kBlockLanes;
  const std::size_t n_blocks = (n_runs + lanes - 1) / lanes;
  std::vector<long> passage(n_runs, -1);

  parallel_for(n_blocks, resolve_threads(threads), [&](std::size_t blk) {
    const std::size_t first = blk * lanes;
    const std::size_t count = std::min(lanes, n_runs - first);
    std::vector<Rng> rngs;
    rngs.reserve(count);
    for (std::size_t lane = 0; lane < count; ++lane) rngs.emplace_back(chain_seed(master_seed, first + lane));
    std::vector<std::normal_distribution<double>> nds(count);
    std::vector<double> w(count, -1.0), eta(count, 0.0);
    std::size_t alive = count;
    for (long t = 1; t <= t_limit && alive > 0; ++t) {
      for (std::size_t lane = 0; lane < count; ++lane) {
        eta[lane] = passage[first + lane] < 0 ? sd * nds[lane](rngs[lane]) : 0.0;
      }
      kt.double_well_step(lr, r, w.data(), eta.data(), count);
      for (std::size_t lane = 0; lane < count; ++lane) {
        if (passage[first + lane] < 0 && w[lane] >= 0.0) {
          passage[first + lane] = t;
          --alive;
        }
      }
    }
  });

  EscapeMeasurement m;
  double exposure = 0.0, total = 0.0;
  for (long p : passage) {
    if (p < 0) {
      ++m.n_censored;
      exposure += static_cast<double>(t_limit);
    } else {
      ++m.n_escaped;
      exposure += static_cast<double>(p);
      total += static_cast<double>(p);
    }
  }
  m.censored = m.n_censored > 0;
  if (m.n_escaped > 0) {
    m.mean_passage = total / static_cast<double>(m.n_escaped);
    m.rate = static_cast<double>(m.n_escaped) / exposure;
    m.rate_std_error = m.rate / std::sqrt(static_cast<double>(m.n_escaped));
  }
  return m;
}

}  // namespace sgdstat::dynamics
