#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "sgdstat/linalg.hpp"
#include "sgdstat/problem.hpp"

namespace sgdstat::stationary {

using linalg::MatrixEquationTerm;

enum class Method { Discrete, Continuous };

const char* to_string(Method m);

struct StationaryPrediction {
  SymMatrix sigma;
  double train_error = 0.0;
  bool stable = true;
  Method method = Method::Discrete;
  // Relative Frobenius residual of the defining matrix equation.
  double residual = 0.0;
  double condition_estimate = 0.0;
};

// ½ Tr[K Σ]
double half_trace(const SymMatrix& k, const SymMatrix& sigma);

// Coefficient lists of the defining equations. Each equation reads
// Σᵢ cᵢ Lᵢ Σ Rᵢ = rhs with the documented right-hand side.
// SGD:           ΣK + KΣ − λKΣK = λC
std::vector<MatrixEquationTerm> sgd_terms(const SymMatrix& k, double lr);
// SGDM:          (1−μ)λ(KΣ + ΣK) − (1+μ²)/(1−μ²) λ² KΣK + μ/(1−μ²) λ²(K²Σ + ΣK²) = λ²C
std::vector<MatrixEquationTerm> sgdm_terms(const SymMatrix& k, double lr, double momentum);
// Matrix rate:   −(1+μ²)/(1−μ²) ΛKΣKΛ + μ/(1−μ²)(ΛKΛKΣ + ΣKΛKΛ) + (1−μ)(ΛKΣ + ΣKΛ) = ΛCΛ
std::vector<MatrixEquationTerm> preconditioned_terms(const SymMatrix& k, const SymMatrix& lambda,
                                                     double momentum);
// Continuous:    ΣK + KΣ = λC/(1−μ)
std::vector<MatrixEquationTerm> continuous_terms(const SymMatrix& k);

StationaryPrediction continuous_covariance(const QuadraticProblem& problem, const SymMatrix& c,
                                           double lr, double momentum = 0.0);
StationaryPrediction solve_sgd_covariance(const QuadraticProblem& problem, const SymMatrix& c,
                                          double lr);
StationaryPrediction solve_sgdm_covariance(const QuadraticProblem& problem, const SymMatrix& c,
                                           double lr, double momentum);
StationaryPrediction closed_form_commuting(const QuadraticProblem& problem, const SymMatrix& c,
                                           double lr, double momentum);
// C = σ²I + aK, μ = 0.
StationaryPrediction mixed_noise_covariance(const QuadraticProblem& problem, double sigma2,
                                            double a, double lr);
StationaryPrediction solve_preconditioned_covariance(const QuadraticProblem& problem,
                                                     const SymMatrix& c, const SymMatrix& lambda,
                                                     double momentum);
// (λ/(4(1−μ))) Tr[(I − λK/(2(1+μ)))⁻¹ C]
double train_error_sgdm(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                        double momentum);

// Quasi-hyperbolic momentum:
//   m ← μm + (1−μ)g,  w ← w − λ[(1−ν)g + νm].
// Unknowns Σ = E[wwᵀ], X = E[w_t w_{t−1}ᵀ], Q with Q − AQA = Σ, A = μ(I − λ(1−ν)K).
struct QhmSolution {
  StationaryPrediction prediction;
  Matrix lag_covariance;
  SymMatrix q;
  double residuals[3] = {0.0, 0.0, 0.0};
};

QhmSolution solve_qhm_system(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                             double momentum, double nu);
// h(K) such that L_train = (λ²/2) Tr[h(K)⁻¹ K C].
SymMatrix qhm_h_matrix(const QuadraticProblem& problem, double lr, double momentum, double nu);
double qhm_train_error_hK(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                          double momentum, double nu);

StationaryPrediction dnm_covariance(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                                    double momentum);
double train_error_dnm(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                       double momentum);

// Constant C commuting with K.
StationaryPrediction ngd_covariance(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                                    double momentum);
// C = ((N−S)/(NS)) KΣK.
StationaryPrediction ngd_covariance_minibatch(const QuadraticProblem& problem, long n_data,
                                              long batch, double lr, double momentum);
double train_error_ngd(const QuadraticProblem& problem, const SymMatrix& c, double lr,
                       double momentum);
double train_error_ngd_minibatch(long dim, long n_data, long batch, double lr, double momentum);
// (KΣ)² − (λ/(2(1+μ)))KΣ − (λ/(2(1−μ)))CK⁻¹, relative to the largest term.
double ngd_equation_residual(const QuadraticProblem& problem, const SymMatrix& sigma,
                             const SymMatrix& c, double lr, double momentum);

// Non-diagonal Adam without momentum, C = cKΣK.
StationaryPrediction adam_covariance(double lr, double c, Index dim);
StationaryPrediction adam_covariance(const QuadraticProblem& problem, double lr, double c);
double train_error_adam(const QuadraticProblem& problem, double lr, double c);

using CovarianceMap = std::function<SymMatrix(const SymMatrix&)>;

struct FixedPointOptions {
  double damping = 0.5;
  double tol = 1e-10;
  int max_iters = 10000;
  // Σ-dependent matrix learning rate; absent means scalar lr.
  CovarianceMap preconditioner_of_sigma;
  std::optional<SymMatrix> initial;
};

struct FixedPointReport {
  int iterations = 0;
  double final_damping = 0.0;
  double residual = 0.0;
};

// Σ ← (1−d)Σ + d·Solve(C(Σ)), with d halved whenever the fixed-point residual
// grows or a solve is unstable.
StationaryPrediction state_dependent_fixed_point(const QuadraticProblem& problem,
                                                 const CovarianceMap& c_of_sigma, double lr,
                                                 double momentum,
                                                 const FixedPointOptions& options = {},
                                                 FixedPointReport* report = nullptr);

struct StabilityVerdict {
  bool stable = false;
  double margin = 0.0;
};

StabilityVerdict stability_check(const QuadraticProblem& problem, double lr, double momentum);
// Uses the spectrum of Λ^{1/2} K Λ^{1/2}.
StabilityVerdict stability_check(const QuadraticProblem& problem, const SymMatrix& lambda,
                                 double momentum);
// Margin 1 − ρ of the per-mode transition matrix.
StabilityVerdict qhm_stability_check(const QuadraticProblem& problem, double lr, double momentum,
                                     double nu);

enum class Regime { MonotoneConvergent, OscillatoryConvergent, Divergent };

const char* to_string(Regime r);
Regime classify_regime_1d(double k, double lr);

struct InverseCovariance {
  SymMatrix exact;
  SymMatrix continuous;
  // exact − continuous; for C = σ²I this is the O(λ⁰) term −K²/σ².
  SymMatrix correction;
};

SymMatrix effective_inverse_covariance(const StationaryPrediction& prediction);
InverseCovariance effective_inverse_expansion(const QuadraticProblem& problem, const SymMatrix& c,
                                              double lr, double momentum);

// Dispatches on optimizer/noise kinds. DNM/NGD/ADAM with scalar lr use their
// idealized preconditioners; with an explicit preconditioner they use the
// general matrix-rate equation.
StationaryPrediction predict(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                             const NoiseSpec& noise);

// Noise covariance at the stationary state as predict() interprets it: minibatch
// noise for NGD and ADAM means qKΣK, state-dependent noise means cKΣK.
SymMatrix noise_covariance_at(const QuadraticProblem& problem, const OptimizerSpec& optimizer,
                              const NoiseSpec& noise, const SymMatrix& sigma);

// Fixed preconditioner that realises the idealized second-order method at its
// predicted stationary state (λK⁻¹, λ(KΣK)⁻¹, λ(KΣK + C)^{-1/2}).
SymMatrix idealized_preconditioner(const QuadraticProblem& problem, OptimizerKind kind, double lr,
                                   const SymMatrix& sigma, const SymMatrix& c);

}  // namespace sgdstat::stationary
