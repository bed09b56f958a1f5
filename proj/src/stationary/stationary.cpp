#include "sgdstat/stationary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sgdstat/errors.hpp"

namespace sgdstat::stationary {

using linalg::SolveReport;

namespace {

Matrix eye(Index d) { return Matrix::Identity(d, d); }

void check_dims(const QuadraticProblem& problem, const SymMatrix& c) {
  if (c.dim() != problem.dim()) throw PreconditionError("noise covariance dimension mismatch");
}

void check_lr(double lr) {
  if (!(lr > 0.0 && std::isfinite(lr))) throw PreconditionError("learning rate must be positive");
}

void check_momentum(double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw PreconditionError("momentum must be in [0,1)");
}

void require_stable(const QuadraticProblem& problem, double lr, double momentum) {
  StabilityVerdict v = stability_check(problem, lr, momentum);
  if (!v.stable) {
    std::ostringstream os;
    os << "stability condition violated: lr*k_max = " << lr * problem.max_curvature()
       << " >= 2(1+mu) = " << 2.0 * (1.0 + momentum);
    throw InstabilityError(os.str());
  }
}

// uᵢᵀ C uᵢ in the eigenbasis of K.
Vector projected_diagonal(const QuadraticProblem& problem, const SymMatrix& c) {
  const Matrix& v = problem.eigen().eigenvectors;
  return (v.transpose() * c.matrix() * v).diagonal();
}

bool commutes(const SymMatrix& a, const SymMatrix& b) {
  double scale = a.norm() * b.norm();
  if (scale == 0.0) return true;
  return linalg::commutator_norm(a.matrix(), b.matrix()) / scale < 1e-10;
}

StationaryPrediction finish(SymMatrix sigma, const QuadraticProblem& problem, Method method,
                            double residual, double cond = 0.0) {
  StationaryPrediction p{std::move(sigma)};
  p.train_error = half_trace(problem.hessian(), p.sigma);
  p.stable = true;
  p.method = method;
  p.residual = residual;
  p.condition_estimate = cond;
  return p;
}

double scaled_residual(const Matrix& lhs_minus_rhs, double scale) {
  double r = lhs_minus_rhs.norm();
  return scale > 0.0 ? r / scale : r;
}

}  // namespace

const char* to_string(Method m) { return m == Method::Discrete ? "discrete" : "continuous"; }

double half_trace(const SymMatrix& k, const SymMatrix& sigma) {
  return 0.5 * (k.matrix().cwiseProduct(sigma.matrix())).sum();
}

std::vector<MatrixEquationTerm> sgd_terms(const SymMatrix& k, double lr) {
  const Index d = k.dim();
  return {
      {1.0, eye(d), k.matrix()},
      {1.0, k.matrix(), eye(d)},
      {-lr, k.matrix(), k.matrix()},
  };
}

std::vector<MatrixEquationTerm> sgdm_terms(const SymMatrix& k, double lr, double momentum) {
  const Index d = k.dim();
  const double mu = momentum;
  const double g = 1.0 - mu * mu;
  Matrix k2 = k.matrix() * k.matrix();
  return {
      {(1.0 - mu) * lr, k.matrix(), eye(d)},
      {(1.0 - mu) * lr, eye(d), k.matrix()},
      {-(1.0 + mu * mu) / g * lr * lr, k.matrix(), k.matrix()},
      {mu / g * lr * lr, k2, eye(d)},
      {mu / g * lr * lr, eye(d), k2},
  };
}

std::vector<MatrixEquationTerm> preconditioned_terms(const SymMatrix& k, const SymMatrix& lambda,
                                                     double momentum) {
  const Index d = k.dim();
  const double mu = momentum;
  const double g = 1.0 - mu * mu;
  Matrix lk = lambda.matrix() * k.matrix();
  Matrix kl = k.matrix() * lambda.matrix();
  return {
      {-(1.0 + mu * mu) / g, lk, kl},
      {mu / g, lk * lk, eye(d)},
      {mu / g, eye(d), kl * kl},
      {1.0 - mu, lk, eye(d)},
      {1.0 - mu, eye(d), kl},
  };
}

std::vector<MatrixEquationTerm> continuous_terms(const SymMatrix& k) {
  const Index d = k.dim();
  return {
      {1.0, eye(d), k.matrix()},
      {1.0, k.matrix(), eye(d)},
  };
}

StationaryPrediction continuous_covariance(const QuadraticProblem& problem, const SymMatrix& c,
                                           double lr, double momentum) {
  check_dims(problem, c);
  check_lr(lr);
  check_momentum(momentum);
  const auto& e = problem.eigen();
  const Matrix& v = e.eigenvectors;
  const double s = lr / (1.0 - momentum);
  Matrix cp = v.transpose() * c.matrix() * v;
  const Index d = problem.dim();
  for (Index j = 0; j < d; ++j) {
    for (Index i = 0; i < d; ++i) {
      cp(i, j) *= s / (e.eigenvalues(i) + e.eigenvalues(j));
    }
  }
  SymMatrix sigma = SymMatrix::symmetrize(v * cp * v.transpose());
  auto terms = continuous_terms(problem.hessian());
  double res = linalg::relative_residual(terms, sigma.matrix(), s * c.matrix());
  return finish(std::move(sigma), problem, Method::Continuous, res);
}

StationaryPrediction solve_sgd_covariance(const QuadraticProblem& problem, const SymMatrix& c,
                                          double lr) {
  check_dims(problem, c);
  check_lr(lr);
  require_stable(problem, lr, 0.0);
  auto terms = sgd_terms(problem.hessian(), lr);
  SolveReport rep;
  SymMatrix sigma = linalg::solve_linear_matrix_equation(terms, c * lr, &rep);
  return finish(std::move(sigma), problem, Method::Discrete, rep.residual, rep.condition_estimate);
}

StationaryPrediction solve_sgdm_covariance(const QuadraticProblem& problem, const SymMatrix& c,
                                           double lr, double momentum) {
  check_dims(problem, c);
  check_lr(lr);
  check_momentum(momentum);
  require_stable(problem, lr, momentum);
  auto terms = sgdm_terms(problem.hessian(), lr, momentum);
  SolveReport rep;
  SymMatrix sigma = linalg::solve_linear_matrix_equation(terms, c * (lr * lr), &rep);
  return finish(std::move(sigma), problem, Method::Discrete, rep.residual, rep.condition_estimate);
}

StationaryPrediction closed_form_commuting(const QuadraticProblem& problem, const SymMatrix& c,
                                           double lr, double momentum) {
  check_dims(problem, c);
  check_lr(lr);
  check_momentum(momentum);
  if (!commutes(c, problem.hessian())) {
    throw PreconditionError("closed_form_commuting: C and K do not commute");
  }
  require_stable(problem, lr, momentum);
  const double mu = momentum;
  const double lt = lr / (1.0 + mu);
  const double num = lr * lr / (1.0 - mu * mu);
  SymMatrix f = linalg::spectral_map(problem.hessian(), [&](double k) {
    return num / (lt * k * (2.0 - lt * k));
  });
  SymMatrix sigma = SymMatrix::symmetrize(f.matrix() * c.matrix());
  auto terms = sgdm_terms(problem.hessian(), lr, mu);
  double res = linalg::relative_residual(terms, sigma.matrix(), lr * lr * c.matrix());
  return finish(std::move(sigma), problem, Method::Discrete, res);
}

StationaryPrediction mixed_noise_covariance(const QuadraticProblem& problem, double sigma2,
                                            double a, double lr) {
  check_lr(lr);
  if (!(sigma2 >= 0.0) || !(a >= 0.0)) throw PreconditionError("sigma2 and a must be >= 0");
  require_stable(problem, lr, 0.0);
  SymMatrix sigma = linalg::spectral_map(problem.hessian(), [&](double k) {
    return lr * (sigma2 + a * k) / (k * (2.0 - lr * k));
  });
  SymMatrix c = SymMatrix::scalar(problem.dim(), sigma2) + problem.hessian() * a;
  auto terms = sgd_terms(problem.hessian(), lr);
  double res = linalg::relative_residual(terms, sigma.matrix(), lr * c.matrix());
  return finish(std::move(sigma), problem, Method::Discrete, res);
}

StationaryPrediction solve_preconditioned_covariance(const QuadraticProblem& problem,
                                                     const SymMatrix& c, const SymMatrix& lambda,
                                                     double momentum) {
  check_dims(problem, c);
  check_momentum(momentum);
  if (lambda.dim() != problem.dim()) throw PreconditionError("preconditioner dimension mismatch");
  if (!linalg::is_positive_definite(lambda)) {
    throw PreconditionError("preconditioner must be positive definite");
  }
  StabilityVerdict v = stability_check(problem, lambda, momentum);
  if (!v.stable) {
    std::ostringstream os;
    os << "stability condition violated for matrix learning rate (margin " << v.margin << ")";
    throw InstabilityError(os.str());
  }
  auto terms = preconditioned_terms(problem.hessian(), lambda, momentum);
  SymMatrix rhs = SymMatrix::symmetrize(lambda.matrix() * c.matrix() * lambda.matrix());
  SolveReport rep;
  SymMatrix sigma = linalg::solve_linear_matrix_equation(terms, rhs, &rep);
  if (!linalg::is_psd(sigma, 1e-10)) {
    throw InstabilityError("matrix-rate solution is not PSD: no stationary state exists");
  }
  return finish(std::move(sigma), problem, Method::Discrete, rep.residual, rep.condition_estimate);
}

double train_error_sgdm(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                        double momentum) {
  check_dims(problem, c);
  check_lr(lr);
  check_momentum(momentum);
  require_stable(problem, lr, momentum);
  const Vector& k = problem.eigen().eigenvalues;
  Vector cd = projected_diagonal(problem, c);
  double acc = 0.0;
  for (Index i = 0; i < k.size(); ++i) {
    acc += cd(i) / (1.0 - lr * k(i) / (2.0 * (1.0 + momentum)));
  }
  return lr / (4.0 * (1.0 - momentum)) * acc;
}

// QHM

namespace {

struct QhmCoefficients {
  double alpha;  // λ[1 − ν + ν(1−μ)]
  double beta;   // λ(1 − ν)
};

QhmCoefficients qhm_coefficients(double lr, double momentum, double nu) {
  return {lr * (1.0 - nu + nu * (1.0 - momentum)), lr * (1.0 - nu)};
}

void check_qhm(const QuadraticProblem& problem, double lr, double momentum, double nu) {
  check_lr(lr);
  check_momentum(momentum);
  if (!(nu >= 0.0 && nu <= 1.0)) throw PreconditionError("qhm nu must be in [0,1]");
  const QhmCoefficients q = qhm_coefficients(lr, momentum, nu);
  double rho_a = 0.0;
  for (Index i = 0; i < problem.dim(); ++i) {
    rho_a = std::max(rho_a, momentum * std::abs(1.0 - q.beta * problem.eigen().eigenvalues(i)));
  }
  if (!(rho_a < 1.0)) {
    std::ostringstream os;
    os << "qhm: spectral radius of A = " << rho_a << " >= 1";
    throw DivergentSeriesError(os.str());
  }
  StabilityVerdict v = qhm_stability_check(problem, lr, momentum, nu);
  if (!v.stable) {
    std::ostringstream os;
    os << "qhm: update is unstable (margin " << v.margin << ")";
    throw InstabilityError(os.str());
  }
}

}  // namespace

QhmSolution solve_qhm_system(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                             double momentum, double nu) {
  check_dims(problem, c);
  check_qhm(problem, lr, momentum, nu);
  const Index d = problem.dim();
  const double mu = momentum;
  const auto [al, be] = qhm_coefficients(lr, mu, nu);
  const Matrix i = eye(d);
  const Matrix& k = problem.hessian().matrix();
  const Matrix e = i - al * k;
  const Matrix f = i - be * k;
  const Matrix a = mu * f;
  const Matrix em = e + mu * i;
  SymMatrix qc = linalg::discrete_lyapunov(a, c);

  enum { kSigma = 0, kX = 1, kQ = 2 };
  linalg::LinearMatrixSystem sys(d, 3);
  // Σ − EΣE − μ²Σ − μ²FΣF − μ(EΣ + ΣE) + μ²(XF + FXᵀ) + μ(EXF + FXᵀE)
  //   = (α² + μ²β² − 2μ²αβ)C − μαβ(EC + CE)
  sys.add(0, kSigma, {1.0 - mu * mu, i, i});
  sys.add(0, kSigma, {-1.0, e, e});
  sys.add(0, kSigma, {-mu * mu, f, f});
  sys.add(0, kSigma, {-mu, e, i});
  sys.add(0, kSigma, {-mu, i, e});
  sys.add(0, kX, {mu * mu, i, f});
  sys.add(0, kX, {mu * mu, f, i, true});
  sys.add(0, kX, {mu, e, f});
  sys.add(0, kX, {mu, f, e, true});
  const double s = al * al + mu * mu * be * be - 2.0 * mu * mu * al * be;
  Matrix rhs0 = s * c.matrix() - mu * al * be * (e * c.matrix() + c.matrix() * e);
  sys.set_rhs(0, rhs0);
  // X − (E + μI)Q + AQ(E + μI) = −μαβ(I − A)Q_C
  sys.add(1, kX, {1.0, i, i});
  sys.add(1, kQ, {-1.0, em, i});
  sys.add(1, kQ, {1.0, a, em});
  Matrix rhs1 = -mu * al * be * (i - a) * qc.matrix();
  sys.set_rhs(1, rhs1);
  // Q − AQA − Σ = 0
  sys.add(2, kQ, {1.0, i, i});
  sys.add(2, kQ, {-1.0, a, a});
  sys.add(2, kSigma, {-1.0, i, i});

  SolveReport rep;
  std::vector<Matrix> x = sys.solve(&rep);
  const Matrix& sig = x[kSigma];
  double asym = (sig - sig.transpose()).norm() / std::max(sig.norm(), 1e-300);
  if (asym > linalg::kAsymmetryTolerance) {
    throw UnstableConfigurationError("qhm: solution Σ is asymmetric");
  }
  QhmSolution out{finish(SymMatrix::symmetrize(sig), problem, Method::Discrete, 0.0,
                         rep.condition_estimate),
                  x[kX], SymMatrix::symmetrize(x[kQ])};
  // Residuals of the three equations, each relative to the larger of its
  // right-hand side and its leading unknown.
  const Matrix& sg = out.prediction.sigma.matrix();
  const Matrix& xx = out.lag_covariance;
  const Matrix& qq = out.q.matrix();
  Matrix r0 = (1.0 - mu * mu) * sg - e * sg * e - mu * mu * f * sg * f - mu * (e * sg + sg * e) +
              mu * mu * (xx * f + f * xx.transpose()) + mu * (e * xx * f + f * xx.transpose() * e) -
              rhs0;
  Matrix r1 = xx - em * qq + a * qq * em - rhs1;
  Matrix r2 = qq - a * qq * a - sg;
  out.residuals[0] = scaled_residual(r0, std::max(rhs0.norm(), sg.norm()));
  out.residuals[1] = scaled_residual(r1, std::max(rhs1.norm(), xx.norm()));
  out.residuals[2] = scaled_residual(r2, std::max(qq.norm(), sg.norm()));
  out.prediction.residual =
      std::max({out.residuals[0], out.residuals[1], out.residuals[2]});
  if (!linalg::is_psd(out.prediction.sigma, 1e-10)) {
    throw InstabilityError("qhm: solution Σ is not PSD");
  }
  return out;
}

namespace {

// h(k) for one curvature value; all matrices in h(K) are functions of K.
double qhm_h_scalar(double k, double lr, double mu, double nu) {
  const auto [al, be] = qhm_coefficients(lr, mu, nu);
  const double e = 1.0 - al * k;
  const double f = 1.0 - be * k;
  const double a = mu * f;
  const double num = 1.0 - e * e - mu * mu - mu * mu * f * f - 2.0 * mu * e +
                     2.0 * mu * f * (mu + e) * (mu + e) / (1.0 + a);
  const double den = (al * al + mu * mu * be * be - 2.0 * mu * mu * al * be) -
                     2.0 * mu * al * be * e + 2.0 * mu * mu * al * be * f * (mu + e) / (1.0 + a);
  return lr * lr * num / den;
}

}  // namespace

SymMatrix qhm_h_matrix(const QuadraticProblem& problem, double lr, double momentum, double nu) {
  check_qhm(problem, lr, momentum, nu);
  return linalg::spectral_map(problem.hessian(),
                              [&](double k) { return qhm_h_scalar(k, lr, momentum, nu); });
}

double qhm_train_error_hK(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                          double momentum, double nu) {
  check_dims(problem, c);
  check_qhm(problem, lr, momentum, nu);
  const Vector& k = problem.eigen().eigenvalues;
  Vector cd = projected_diagonal(problem, c);
  double acc = 0.0;
  for (Index i = 0; i < k.size(); ++i) {
    double h = qhm_h_scalar(k(i), lr, momentum, nu);
    if (!(std::abs(h) > 1e-300) || !std::isfinite(h)) {
      throw UnstableConfigurationError("qhm: h(K) is singular");
    }
    acc += k(i) * cd(i) / h;
  }
  return 0.5 * lr * lr * acc;
}

// DNM

namespace {

double dnm_coefficient(double lr, double momentum) {
  return (1.0 + momentum) / (1.0 - momentum) * lr / (2.0 * (1.0 + momentum) - lr);
}

void check_dnm(double lr, double momentum) {
  check_lr(lr);
  check_momentum(momentum);
  if (!(lr < 2.0 * (1.0 + momentum))) {
    throw InstabilityError("dnm: lr must be below 2(1+mu)");
  }
}

}  // namespace

StationaryPrediction dnm_covariance(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                                    double momentum) {
  check_dims(problem, c);
  check_dnm(lr, momentum);
  SymMatrix kinv = linalg::spd_inverse(problem.hessian());
  SymMatrix sigma = SymMatrix::symmetrize(dnm_coefficient(lr, momentum) * kinv.matrix() *
                                          c.matrix() * kinv.matrix());
  SymMatrix lambda = kinv * lr;
  auto terms = preconditioned_terms(problem.hessian(), lambda, momentum);
  double res = linalg::relative_residual(terms, sigma.matrix(),
                                         lambda.matrix() * c.matrix() * lambda.matrix());
  return finish(std::move(sigma), problem, Method::Discrete, res);
}

double train_error_dnm(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                       double momentum) {
  check_dims(problem, c);
  check_dnm(lr, momentum);
  SymMatrix kinv = linalg::spd_inverse(problem.hessian());
  return (1.0 + momentum) / (1.0 - momentum) * lr / (4.0 * (1.0 + momentum) - 2.0 * lr) *
         (kinv.matrix().cwiseProduct(c.matrix())).sum();
}

// NGD

namespace {

// Q = [λ²/(4(1+μ)²) I + (2λ/(1−μ)) C K⁻¹]^{1/2}
SymMatrix ngd_q(const QuadraticProblem& problem, const SymMatrix& c, double lr, double momentum) {
  if (!commutes(c, problem.hessian())) {
    throw PreconditionError("ngd: constant C must commute with K for the closed form");
  }
  SymMatrix kinv = linalg::spd_inverse(problem.hessian());
  SymMatrix ck = SymMatrix::symmetrize(c.matrix() * kinv.matrix());
  const double h = lr / (2.0 * (1.0 + momentum));
  SymMatrix inner = SymMatrix::scalar(problem.dim(), h * h) + ck * (2.0 * lr / (1.0 - momentum));
  return linalg::spd_sqrt(inner);
}

double ngd_minibatch_coefficient(double q, double lr, double momentum) {
  return lr * ((1.0 + momentum) * q + 1.0 - momentum) / (2.0 * (1.0 - momentum * momentum));
}

}  // namespace

StationaryPrediction ngd_covariance(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                                    double momentum) {
  check_dims(problem, c);
  check_lr(lr);
  check_momentum(momentum);
  SymMatrix q = ngd_q(problem, c, lr, momentum);
  const double h = lr / (2.0 * (1.0 + momentum));
  SymMatrix kinv = linalg::spd_inverse(problem.hessian());
  SymMatrix sigma = SymMatrix::symmetrize(
      0.5 * kinv.matrix() * (q.matrix() + h * Matrix::Identity(problem.dim(), problem.dim())));
  double res = ngd_equation_residual(problem, sigma, c, lr, momentum);
  return finish(std::move(sigma), problem, Method::Discrete, res);
}

StationaryPrediction ngd_covariance_minibatch(const QuadraticProblem& problem, long n_data,
                                              long batch, double lr, double momentum) {
  check_lr(lr);
  check_momentum(momentum);
  const double q = minibatch_coefficient(n_data, batch);
  SymMatrix kinv = linalg::spd_inverse(problem.hessian());
  SymMatrix sigma = kinv * ngd_minibatch_coefficient(q, lr, momentum);
  SymMatrix c = SymMatrix::symmetrize(q * problem.hessian().matrix() * sigma.matrix() *
                                      problem.hessian().matrix());
  double res = ngd_equation_residual(problem, sigma, c, lr, momentum);
  return finish(std::move(sigma), problem, Method::Discrete, res);
}

double train_error_ngd(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                       double momentum) {
  check_dims(problem, c);
  check_lr(lr);
  check_momentum(momentum);
  SymMatrix q = ngd_q(problem, c, lr, momentum);
  return 0.25 * (q.trace() + lr / (2.0 * (1.0 + momentum)) * static_cast<double>(problem.dim()));
}

double train_error_ngd_minibatch(long dim, long n_data, long batch, double lr, double momentum) {
  check_lr(lr);
  check_momentum(momentum);
  const double q = minibatch_coefficient(n_data, batch);
  return 0.5 * ngd_minibatch_coefficient(q, lr, momentum) * static_cast<double>(dim);
}

double ngd_equation_residual(const QuadraticProblem& problem, const SymMatrix& sigma,
                             const SymMatrix& c, double lr, double momentum) {
  const Matrix& k = problem.hessian().matrix();
  Matrix ks = k * sigma.matrix();
  Matrix t1 = ks * ks;
  Matrix t2 = lr / (2.0 * (1.0 + momentum)) * ks;
  Matrix t3 = lr / (2.0 * (1.0 - momentum)) * c.matrix() * linalg::spd_inverse(problem.hessian()).matrix();
  double scale = std::max({t1.norm(), t2.norm(), t3.norm()});
  return scaled_residual(t1 - t2 - t3, scale);
}

// Adam

StationaryPrediction adam_covariance(double lr, double c, Index dim) {
  check_lr(lr);
  if (!(c >= 0.0)) throw PreconditionError("adam: c must be >= 0");
  if (dim < 1) throw PreconditionError("adam: dim must be >= 1");
  StationaryPrediction p{SymMatrix::scalar(dim, lr * lr * (1.0 + c) / 4.0)};
  p.train_error = std::nan("");
  return p;
}

StationaryPrediction adam_covariance(const QuadraticProblem& problem, double lr, double c) {
  StationaryPrediction p = adam_covariance(lr, c, problem.dim());
  p.train_error = half_trace(problem.hessian(), p.sigma);
  if (c > 0.0) {
    SymMatrix noise = SymMatrix::symmetrize(c * problem.hessian().matrix() * p.sigma.matrix() *
                                            problem.hessian().matrix());
    SymMatrix lambda = idealized_preconditioner(problem, OptimizerKind::Adam, lr, p.sigma, noise);
    auto terms = preconditioned_terms(problem.hessian(), lambda, 0.0);
    p.residual = linalg::relative_residual(terms, p.sigma.matrix(),
                                           lambda.matrix() * noise.matrix() * lambda.matrix());
  }
  return p;
}

double train_error_adam(const QuadraticProblem& problem, double lr, double c) {
  check_lr(lr);
  if (!(c >= 0.0)) throw PreconditionError("adam: c must be >= 0");
  return lr * lr * (1.0 + c) / 8.0 * problem.hessian().trace();
}

// State-dependent noise

StationaryPrediction state_dependent_fixed_point(const QuadraticProblem& problem,
                                                 const CovarianceMap& c_of_sigma, double lr,
                                                 double momentum,
                                                 const FixedPointOptions& options,
                                                 FixedPointReport* report) {
  if (!(options.damping > 0.0 && options.damping <= 1.0)) {
    throw PreconditionError("fixed point: damping must be in (0,1]");
  }
  if (options.max_iters < 1) throw PreconditionError("fixed point: max_iters must be >= 1");
  const bool matrix_rate = static_cast<bool>(options.preconditioner_of_sigma);
  if (!matrix_rate) check_lr(lr);

  auto solve_at = [&](const SymMatrix& s) {
    SymMatrix c = c_of_sigma(s);
    if (matrix_rate) {
      return solve_preconditioned_covariance(problem, c, options.preconditioner_of_sigma(s),
                                             momentum);
    }
    return solve_sgdm_covariance(problem, c, lr, momentum);
  };
  auto rel_change = [](const SymMatrix& next, const SymMatrix& cur) {
    double scale = std::max(next.norm(), cur.norm());
    return scale > 0.0 ? (next - cur).norm() / scale : 0.0;
  };

  SymMatrix sigma = SymMatrix::zero(problem.dim());
  if (options.initial) {
    sigma = *options.initial;
  } else if (matrix_rate) {
    throw PreconditionError("fixed point: a Σ-dependent preconditioner needs an initial Σ");
  } else {
    sigma = solve_at(SymMatrix::zero(problem.dim())).sigma;
  }

  double d = options.damping;
  double prev_res = std::numeric_limits<double>::infinity();
  std::optional<SymMatrix> prev_sigma, prev_image;
  double res = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= options.max_iters; ++it) {
    std::optional<StationaryPrediction> image;
    try {
      image.emplace(solve_at(sigma));
    } catch (const InstabilityError&) {
      if (!prev_sigma) throw;
      d *= 0.5;
      sigma = *prev_sigma * (1.0 - d) + *prev_image * d;
      continue;
    } catch (const UnstableConfigurationError&) {
      if (!prev_sigma) throw;
      d *= 0.5;
      sigma = *prev_sigma * (1.0 - d) + *prev_image * d;
      continue;
    }
    res = rel_change(image->sigma, sigma);
    if (res <= options.tol) {
      if (report) *report = {it, d, res};
      return std::move(*image);
    }
    if (res > prev_res) d *= 0.5;
    if (d < 1e-14) break;
    prev_res = res;
    prev_sigma = sigma;
    prev_image = image->sigma;
    sigma = sigma * (1.0 - d) + image->sigma * d;
  }
  std::ostringstream os;
  os << "state-dependent fixed point did not converge (last residual " << res << ")";
  throw NonConvergenceError(os.str(), options.max_iters, res);
}

// Stability

StabilityVerdict stability_check(const QuadraticProblem& problem, double lr, double momentum) {
  check_momentum(momentum);
  const double margin = 2.0 * (1.0 + momentum) - lr * problem.max_curvature();
  return {margin > 0.0, margin};
}

StabilityVerdict stability_check(const QuadraticProblem& problem, const SymMatrix& lambda,
                                 double momentum) {
  check_momentum(momentum);
  SymMatrix r = linalg::spd_sqrt(lambda);
  SymMatrix m = SymMatrix::symmetrize(r.matrix() * problem.hessian().matrix() * r.matrix());
  const double margin = 2.0 * (1.0 + momentum) - linalg::max_eigenvalue(m);
  return {margin > 0.0, margin};
}

StabilityVerdict qhm_stability_check(const QuadraticProblem& problem, double lr, double momentum,
                                     double nu) {
  const auto [al, be] = qhm_coefficients(lr, momentum, nu);
  (void)be;
  double rho = 0.0;
  for (Index i = 0; i < problem.dim(); ++i) {
    const double k = problem.eigen().eigenvalues(i);
    Eigen::Matrix2d t;
    t << 1.0 - al * k, -lr * nu * momentum, (1.0 - momentum) * k, momentum;
    rho = std::max(rho, linalg::spectral_radius(t));
  }
  return {rho < 1.0, 1.0 - rho};
}

const char* to_string(Regime r) {
  switch (r) {
    case Regime::MonotoneConvergent: return "monotone_convergent";
    case Regime::OscillatoryConvergent: return "oscillatory_convergent";
    case Regime::Divergent: return "divergent";
  }
  return "?";
}

Regime classify_regime_1d(double k, double lr) {
  if (!(k > 0.0) || !(lr > 0.0)) throw PreconditionError("classify_regime_1d: k, lr must be > 0");
  const double x = lr * k;
  if (x < 1.0) return Regime::MonotoneConvergent;
  if (x < 2.0) return Regime::OscillatoryConvergent;
  return Regime::Divergent;
}

SymMatrix effective_inverse_covariance(const StationaryPrediction& prediction) {
  if (!prediction.stable) throw PreconditionError("effective inverse: prediction is not stable");
  if (!linalg::is_positive_definite(prediction.sigma)) {
    throw PreconditionError("effective inverse: Σ is singular");
  }
  return linalg::spd_inverse(prediction.sigma);
}

InverseCovariance effective_inverse_expansion(const QuadraticProblem& problem, const SymMatrix& c,
                                              double lr, double momentum) {
  SymMatrix exact = effective_inverse_covariance(solve_sgdm_covariance(problem, c, lr, momentum));
  SymMatrix cont = effective_inverse_covariance(continuous_covariance(problem, c, lr, momentum));
  return {exact, cont, exact - cont};
}

// Dispatch

SymMatrix noise_covariance_at(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                              const NoiseSpec& noise, const SymMatrix& sigma) {
  const bool second_order = !optimizer.preconditioner && (optimizer.kind == OptimizerKind::Ngd ||
                                                          optimizer.kind == OptimizerKind::Adam);
  if (second_order && noise.kind == NoiseKind::Minibatch) {
    const Matrix& k = problem.hessian().matrix();
    return SymMatrix::symmetrize(minibatch_coefficient(noise.n_data, noise.batch) * k *
                                 sigma.matrix() * k);
  }
  return noise.covariance_for(problem, &sigma);
}

SymMatrix idealized_preconditioner(const QuadraticProblem& problem, OptimizerKind kind, double lr,
                                   const SymMatrix& sigma, const SymMatrix& c) {
  const Matrix& k = problem.hessian().matrix();
  switch (kind) {
    case OptimizerKind::Dnm: return linalg::spd_inverse(problem.hessian()) * lr;
    case OptimizerKind::Ngd:
      return linalg::spd_inverse(SymMatrix::symmetrize(k * sigma.matrix() * k)) * lr;
    case OptimizerKind::Adam: {
      SymMatrix g = SymMatrix::symmetrize(k * sigma.matrix() * k + c.matrix());
      return linalg::spd_inverse(linalg::spd_sqrt(g)) * lr;
    }
    default: break;
  }
  throw PreconditionError("idealized preconditioner only exists for dnm, ngd and adam");
}

StationaryPrediction predict(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                             const NoiseSpec& noise) {
  optimizer.validate();
  noise.validate();
  const double mu = optimizer.momentum;
  const bool state = noise.depends_on_state();

  if (optimizer.preconditioner) {
    if (state) throw PreconditionError("state-dependent noise needs a scalar lr");
    return solve_preconditioned_covariance(problem, noise.covariance_for(problem),
                                           *optimizer.preconditioner, mu);
  }
  const double lr = *optimizer.lr;
  auto state_map = [&](double coef) {
    return CovarianceMap([&problem, coef](const SymMatrix& s) {
      return SymMatrix::symmetrize(coef * problem.hessian().matrix() * s.matrix() *
                                   problem.hessian().matrix());
    });
  };

  switch (optimizer.kind) {
    case OptimizerKind::Sgd:
    case OptimizerKind::Sgdm:
      if (state) return state_dependent_fixed_point(problem, state_map(noise.coefficient), lr, mu);
      if (optimizer.kind == OptimizerKind::Sgd) {
        return solve_sgd_covariance(problem, noise.covariance_for(problem), lr);
      }
      return solve_sgdm_covariance(problem, noise.covariance_for(problem), lr, mu);
    case OptimizerKind::Qhm:
      if (state) throw PreconditionError("qhm: state-dependent noise is not supported");
      return solve_qhm_system(problem, noise.covariance_for(problem), lr, mu, optimizer.qhm_nu)
          .prediction;
    case OptimizerKind::Dnm:
      if (state) {
        FixedPointOptions opt;
        SymMatrix lambda = linalg::spd_inverse(problem.hessian()) * lr;
        opt.preconditioner_of_sigma = [lambda](const SymMatrix&) { return lambda; };
        opt.initial = SymMatrix::zero(problem.dim());
        return state_dependent_fixed_point(problem, state_map(noise.coefficient), lr, mu, opt);
      }
      return dnm_covariance(problem, noise.covariance_for(problem), lr, mu);
    case OptimizerKind::Ngd:
      if (noise.kind == NoiseKind::Minibatch) {
        return ngd_covariance_minibatch(problem, noise.n_data, noise.batch, lr, mu);
      }
      if (state) {
        SymMatrix kinv = linalg::spd_inverse(problem.hessian());
        SymMatrix sigma = kinv * ngd_minibatch_coefficient(noise.coefficient, lr, mu);
        SymMatrix c = state_map(noise.coefficient)(sigma);
        StationaryPrediction p = finish(sigma, problem, Method::Discrete, 0.0);
        p.residual = ngd_equation_residual(problem, p.sigma, c, lr, mu);
        return p;
      }
      return ngd_covariance(problem, noise.covariance_for(problem), lr, mu);
    case OptimizerKind::Adam: {
      if (mu != 0.0) throw PreconditionError("adam: only the momentum-free form is solvable");
      double c;
      if (noise.kind == NoiseKind::Minibatch) {
        c = minibatch_coefficient(noise.n_data, noise.batch);
      } else if (state) {
        c = noise.coefficient;
      } else {
        throw PreconditionError("adam: noise must be of the form c K Σ K (state_dependent or minibatch)");
      }
      return adam_covariance(problem, lr, c);
    }
  }
  throw PreconditionError("unknown optimizer");
}

}  // namespace sgdstat::stationary
