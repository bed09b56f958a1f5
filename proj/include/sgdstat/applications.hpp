#pragma once

#include <vector>

#include "sgdstat/problem.hpp"

namespace sgdstat::applications {

// D_KL = ½[N Tr(KΣ) − ln|NK| − ln|Σ| − D] between the stationary Gaussian and
// the posterior N(w*, (NK)⁻¹).
double kl_divergence(const SymMatrix& sigma, const SymMatrix& k, double n_data);

struct BayesSetting {
  SymMatrix hessian;
  long n_data = 0;
  long batch = 0;
};

// Stationary SGD covariance under minibatch noise C = (N−S)/(NS)·K:
// Σ(λ) = λ(N−S)/(NS)·(2I − λK)⁻¹.
SymMatrix bayes_covariance(const BayesSetting& s, double lr);

// LHS − D/λ of the optimality condition
// Σᵢ (N−2S)/S·kᵢ/(2−λkᵢ) + λ(N−S)/S·Σᵢ kᵢ²/(2−λkᵢ)² = D/λ.
double bayes_condition(const BayesSetting& s, double lr);
// |bayes_condition| / (D/λ).
double bayes_relative_residual(const BayesSetting& s, double lr);

struct BayesOptimum {
  double lr = 0.0;
  double relative_residual = 0.0;
  double kl = 0.0;
  int n_roots = 0;
  // Small-λ approximation 2(S/N)D/Tr[K].
  double small_lr_approximation = 0.0;
};

// Scans 10³ points of (ε, 2/k* − ε) for sign changes, bisects each bracket and
// returns the root with the smallest KL divergence. Throws NoOptimumError when
// there is no root.
BayesOptimum optimal_bayes_lr(const BayesSetting& s);

// E_d(t) = (λ/4)Tr[(I − λK/2)⁻¹(I − (I − λK)^{2t})C]. Requires λk* < 2.
double escape_efficiency_discrete(const SymMatrix& k, const SymMatrix& c, double lr, long t);
// t → ∞ limit (λ/2)Tr[(2I − λK)⁻¹C].
double escape_efficiency_discrete_limit(const SymMatrix& k, const SymMatrix& c, double lr);
// E_c(t) = (λ/4)Tr[(I − e^{−2λKt})C]; t may be +inf.
double escape_efficiency_continuous(const SymMatrix& k, const SymMatrix& c, double lr, double t);

// Markov bound min(E/δ, 1).
double escape_probability_bound(double efficiency, double delta);

struct IllConditionedHessian {
  SymMatrix hessian;
  // True when l = D, i.e. there are no small eigenvalues.
  bool degenerate = false;
};

// Diagonal K with l eigenvalues k1 and D − l eigenvalues k1·D^{−d}/2.
IllConditionedHessian make_ill_conditioned_hessian(long dim, double d, long l, double k1);

// Tr[KC] / Tr[K C̄], C̄ = (Tr[C]/D)·I.
double efficiency_ratio(const SymMatrix& k, const SymMatrix& c);

struct AlignmentBound {
  double a = 0.0;
  double overlap = 0.0;  // squared projection of C's top eigenvector on K's top eigenspace
  double bound = 0.0;    // a·D·k₁²/(Tr K)²
};

// a = c₁Tr[K]/(k₁Tr[C])·‖P₁v₁‖², P₁ the projector on K's top eigenspace.
AlignmentBound alignment_bound(const SymMatrix& k, const SymMatrix& c);

struct KramersSetting {
  double k_a = 0.0;
  double k_b = 0.0;  // barrier curvature, negative; magnitude used
  double delta_l = 0.0;
  double lr = 0.0;
  double batch = 1.0;
  double midpoint = 0.5;

  void validate() const;
  // (k_a, k_b, ΔL) scaled by r, the rest unchanged.
  KramersSetting rescaled(double r) const;
};

double kramers_rate_discrete(const KramersSetting& s);
double kramers_rate_continuous(const KramersSetting& s);

struct LogFit {
  double constant = 0.0;      // measured ≈ constant · predicted
  double log_constant = 0.0;
  double pearson = 0.0;       // between log predicted and log measured
  double rms_log_error = 0.0; // after the fit
};

// Least squares in log space with unit slope. Entries must be positive.
LogFit fit_log_constant(const std::vector<double>& predicted, const std::vector<double>& measured);

}  // namespace sgdstat::applications
