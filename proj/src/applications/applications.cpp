#include "sgdstat/applications.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "sgdstat/errors.hpp"

namespace sgdstat::applications {

namespace {

using linalg::sym_eigen;

// Diagonal of C in the eigenbasis of K.
Vector projected_diagonal(const linalg::EigenDecomposition& ek, const SymMatrix& c) {
  return (ek.eigenvectors.transpose() * c.matrix() * ek.eigenvectors).diagonal();
}

void check_pair(const SymMatrix& k, const SymMatrix& c) {
  if (k.dim() != c.dim()) throw PreconditionError("K and C dimensions differ");
}

// 1 − (1 − x)^{2t} without cancellation for small x.
double one_minus_power(double x, long t) {
  if (t == 0) return 0.0;
  double base = 1.0 - x;
  if (base == 0.0) return 1.0;
  return -std::expm1(2.0 * static_cast<double>(t) * std::log(std::abs(base)));
}

}  // namespace

double kl_divergence(const SymMatrix& sigma, const SymMatrix& k, double n_data) {
  if (sigma.dim() != k.dim()) throw PreconditionError("kl_divergence: dimension mismatch");
  if (!(n_data > 0.0)) throw PreconditionError("kl_divergence: N must be positive");
  if (!linalg::is_positive_definite(sigma)) throw NotPsdError("kl_divergence: singular Σ");
  const double d = static_cast<double>(k.dim());
  double tr = (k.matrix() * sigma.matrix()).trace();
  double log_nk = d * std::log(n_data) + linalg::log_det_spd(k);
  return 0.5 * (n_data * tr - log_nk - linalg::log_det_spd(sigma) - d);
}

namespace {

void validate(const BayesSetting& s) {
  if (s.n_data < 1 || s.batch < 1 || s.batch > s.n_data) {
    throw PreconditionError("bayes: need 1 <= S <= N");
  }
  if (s.batch == s.n_data) throw NoOptimumError("bayes: S = N gives zero noise, no optimum");
  if (!linalg::is_positive_definite(s.hessian)) throw NotPsdError("bayes: K must be PD");
}

}  // namespace

SymMatrix bayes_covariance(const BayesSetting& s, double lr) {
  const double n = static_cast<double>(s.n_data);
  const double b = static_cast<double>(s.batch);
  const double q = (n - b) / (n * b);
  return linalg::spectral_map(s.hessian, [&](double k) {
    double den = 2.0 - lr * k;
    if (!(den > 0.0)) throw InstabilityError("bayes: λk* must be below 2");
    return lr * q / den;
  });
}

double bayes_condition(const BayesSetting& s, double lr) {
  const double n = static_cast<double>(s.n_data);
  const double b = static_cast<double>(s.batch);
  const auto e = sym_eigen(s.hessian);
  double first = 0.0, second = 0.0;
  for (Index i = 0; i < e.eigenvalues.size(); ++i) {
    double k = e.eigenvalues(i);
    double den = 2.0 - lr * k;
    first += k / den;
    second += k * k / (den * den);
  }
  const double d = static_cast<double>(s.hessian.dim());
  return (n - 2.0 * b) / b * first + lr * (n - b) / b * second - d / lr;
}

double bayes_relative_residual(const BayesSetting& s, double lr) {
  const double d = static_cast<double>(s.hessian.dim());
  return std::abs(bayes_condition(s, lr)) / (d / lr);
}

BayesOptimum optimal_bayes_lr(const BayesSetting& s) {
  validate(s);
  const double upper = 2.0 / linalg::max_eigenvalue(s.hessian);
  const double eps = 1e-8 * upper;
  const double lo = eps, hi = upper - eps;
  const int n_grid = 1000;
  auto f = [&](double lr) { return bayes_condition(s, lr); };

  BayesOptimum best;
  best.kl = std::numeric_limits<double>::infinity();
  double x0 = lo, f0 = f(lo);
  for (int i = 1; i <= n_grid; ++i) {
    double x1 = lo + (hi - lo) * static_cast<double>(i) / n_grid;
    double f1 = f(x1);
    if (f0 == 0.0 || (f0 < 0.0) != (f1 < 0.0)) {
      double a = x0, b = x1, fa = f0;
      if (f0 != 0.0) {
        for (int it = 0; it < 200; ++it) {
          double m = 0.5 * (a + b);
          if (m <= a || m >= b) break;
          double fm = f(m);
          if (fm == 0.0) {
            a = b = m;
            break;
          }
          if ((fm < 0.0) == (fa < 0.0)) {
            a = m;
            fa = fm;
          } else {
            b = m;
          }
        }
      }
      double root = std::abs(f(a)) <= std::abs(f(b)) ? a : b;
      double kl = kl_divergence(bayes_covariance(s, root), s.hessian, static_cast<double>(s.n_data));
      ++best.n_roots;
      if (kl < best.kl) {
        best.kl = kl;
        best.lr = root;
      }
    }
    x0 = x1;
    f0 = f1;
  }
  if (best.n_roots == 0) {
    throw NoOptimumError("bayes: no root of the optimality condition in (0, 2/k*)");
  }
  best.relative_residual = bayes_relative_residual(s, best.lr);
  best.small_lr_approximation = 2.0 * static_cast<double>(s.batch) / static_cast<double>(s.n_data) *
                                static_cast<double>(s.hessian.dim()) / s.hessian.trace();
  return best;
}

double escape_efficiency_discrete(const SymMatrix& k, const SymMatrix& c, double lr, long t) {
  check_pair(k, c);
  if (t < 0) throw PreconditionError("escape efficiency: t must be >= 0");
  if (!(lr > 0.0)) throw PreconditionError("escape efficiency: lr must be positive");
  const auto ek = sym_eigen(k);
  if (!(lr * ek.eigenvalues(0) < 2.0)) {
    throw InstabilityError("escape efficiency: λk* = " + std::to_string(lr * ek.eigenvalues(0)) +
                           " is not below 2");
  }
  const Vector cd = projected_diagonal(ek, c);
  double acc = 0.0;
  for (Index i = 0; i < cd.size(); ++i) {
    double x = lr * ek.eigenvalues(i);
    acc += one_minus_power(x, t) / (1.0 - 0.5 * x) * cd(i);
  }
  return 0.25 * lr * acc;
}

double escape_efficiency_discrete_limit(const SymMatrix& k, const SymMatrix& c, double lr) {
  check_pair(k, c);
  const auto ek = sym_eigen(k);
  if (!(lr * ek.eigenvalues(0) < 2.0)) throw InstabilityError("escape efficiency: λk* >= 2");
  const Vector cd = projected_diagonal(ek, c);
  double acc = 0.0;
  for (Index i = 0; i < cd.size(); ++i) acc += cd(i) / (2.0 - lr * ek.eigenvalues(i));
  return 0.5 * lr * acc;
}

double escape_efficiency_continuous(const SymMatrix& k, const SymMatrix& c, double lr, double t) {
  check_pair(k, c);
  if (!(lr > 0.0)) throw PreconditionError("escape efficiency: lr must be positive");
  if (!(t >= 0.0)) throw PreconditionError("escape efficiency: t must be >= 0");
  const auto ek = sym_eigen(k);
  const Vector cd = projected_diagonal(ek, c);
  double acc = 0.0;
  for (Index i = 0; i < cd.size(); ++i) {
    double kt = ek.eigenvalues(i) * t;
    acc += (kt == 0.0 ? 0.0 : -std::expm1(-2.0 * lr * kt)) * cd(i);
  }
  return 0.25 * lr * acc;
}

double escape_probability_bound(double efficiency, double delta) {
  if (!(delta > 0.0)) throw PreconditionError("escape bound: δ must be positive");
  if (!(efficiency >= 0.0)) throw PreconditionError("escape bound: E must be >= 0");
  return std::min(efficiency / delta, 1.0);
}

IllConditionedHessian make_ill_conditioned_hessian(long dim, double d, long l, double k1) {
  if (dim < 1) throw PreconditionError("ill-conditioned K: D must be >= 1");
  if (!(d > 0.5)) throw PreconditionError("ill-conditioned K: d must exceed 1/2");
  if (l < 1 || l > dim) throw PreconditionError("ill-conditioned K: l must be in [1, D]");
  if (!(k1 > 0.0)) throw PreconditionError("ill-conditioned K: k1 must be positive");
  Vector ev(dim);
  const double small = 0.5 * k1 * std::pow(static_cast<double>(dim), -d);
  for (long i = 0; i < dim; ++i) ev(i) = i < l ? k1 : small;
  return {SymMatrix::diagonal(ev), l == dim};
}

double efficiency_ratio(const SymMatrix& k, const SymMatrix& c) {
  check_pair(k, c);
  const double trc = c.trace();
  if (trc == 0.0) throw PreconditionError("efficiency ratio: Tr[C] = 0");
  const double d = static_cast<double>(k.dim());
  return (k.matrix() * c.matrix()).trace() / (k.trace() * trc / d);
}

AlignmentBound alignment_bound(const SymMatrix& k, const SymMatrix& c) {
  check_pair(k, c);
  const auto ek = sym_eigen(k);
  const auto ec = sym_eigen(c);
  const double k1 = ek.eigenvalues(0);
  const double c1 = ec.eigenvalues(0);
  const Vector v1 = ec.eigenvectors.col(0);
  double overlap = 0.0;
  for (Index i = 0; i < ek.eigenvalues.size(); ++i) {
    if (ek.eigenvalues(i) < k1 * (1.0 - 1e-12)) break;
    double p = ek.eigenvectors.col(i).dot(v1);
    overlap += p * p;
  }
  AlignmentBound out;
  out.overlap = overlap;
  out.a = c1 * k.trace() / (k1 * c.trace()) * overlap;
  const double tr = k.trace();
  out.bound = out.a * static_cast<double>(k.dim()) * k1 * k1 / (tr * tr);
  return out;
}

void KramersSetting::validate() const {
  if (!(k_a > 0.0)) throw PreconditionError("kramers: k_a must be positive");
  if (!(k_b < 0.0)) throw PreconditionError("kramers: k_b must be negative");
  if (!(delta_l > 0.0)) throw PreconditionError("kramers: ΔL must be positive");
  if (!(lr > 0.0) || !(batch > 0.0)) throw PreconditionError("kramers: lr and S must be positive");
  if (!(midpoint > 0.0 && midpoint < 1.0)) throw PreconditionError("kramers: l must be in (0,1)");
}

KramersSetting KramersSetting::rescaled(double r) const {
  KramersSetting s = *this;
  s.k_a *= r;
  s.k_b *= r;
  s.delta_l *= r;
  return s;
}

double kramers_rate_discrete(const KramersSetting& s) {
  s.validate();
  const double x = s.lr * s.k_a;
  if (!(x < 2.0)) throw InstabilityError("kramers: λk_a must be below 2");
  const double kb = std::abs(s.k_b);
  const double pre = kb / (2.0 * std::numbers::pi) * std::sqrt(2.0 / (2.0 - x));
  const double e = std::erf(std::sqrt(s.batch * (2.0 - x) * s.delta_l / x));
  const double expo = -(2.0 * s.batch * s.delta_l / s.lr) *
                      (s.midpoint * (1.0 - 0.5 * x) / s.k_a + (1.0 - s.midpoint) / kb);
  return pre * e * std::exp(expo);
}

double kramers_rate_continuous(const KramersSetting& s) {
  s.validate();
  const double kb = std::abs(s.k_b);
  const double expo =
      -(2.0 * s.batch * s.delta_l / s.lr) * (s.midpoint / s.k_a + (1.0 - s.midpoint) / kb);
  return kb / (2.0 * std::numbers::pi) * std::exp(expo);
}

LogFit fit_log_constant(const std::vector<double>& predicted, const std::vector<double>& measured) {
  if (predicted.size() != measured.size() || predicted.size() < 2) {
    throw PreconditionError("log fit: need two or more matched points");
  }
  const std::size_t n = predicted.size();
  std::vector<double> lp(n), lm(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(predicted[i] > 0.0) || !(measured[i] > 0.0)) {
      throw PreconditionError("log fit: values must be positive");
    }
    lp[i] = std::log(predicted[i]);
    lm[i] = std::log(measured[i]);
  }
  double mp = 0.0, mm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += lp[i];
    mm += lm[i];
  }
  mp /= static_cast<double>(n);
  mm /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0, sse = 0.0;
  LogFit fit;
  fit.log_constant = mm - mp;
  fit.constant = std::exp(fit.log_constant);
  for (std::size_t i = 0; i < n; ++i) {
    double dx = lp[i] - mp, dy = lm[i] - mm;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
    double r = lm[i] - lp[i] - fit.log_constant;
    sse += r * r;
  }
  fit.pearson = (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : 0.0;
  fit.rms_log_error = std::sqrt(sse / static_cast<double>(n));
  return fit;
}

}  // namespace sgdstat::applications
