#pragma once

#include <optional>
#include <string>

#include "sgdstat/linalg.hpp"

namespace sgdstat {

using linalg::Index;
using linalg::Matrix;
using linalg::SymMatrix;
using linalg::Vector;

// Quadratic loss L(w) = (w − w*)ᵀ K (w − w*) / 2 with K positive definite.
class QuadraticProblem {
 public:
  explicit QuadraticProblem(SymMatrix hessian);
  QuadraticProblem(SymMatrix hessian, Vector optimum);

  Index dim() const { return hessian_.dim(); }
  const SymMatrix& hessian() const { return hessian_; }
  const Vector& optimum() const { return optimum_; }
  const linalg::EigenDecomposition& eigen() const { return eigen_; }
  double max_curvature() const { return eigen_.eigenvalues(0); }
  double min_curvature() const { return eigen_.eigenvalues(dim() - 1); }

 private:
  SymMatrix hessian_;
  Vector optimum_;
  linalg::EigenDecomposition eigen_;
};

enum class OptimizerKind { Sgd, Sgdm, Qhm, Dnm, Ngd, Adam };

const char* to_string(OptimizerKind kind);
std::optional<OptimizerKind> parse_optimizer_kind(const std::string& s);

// Update rule and hyperparameters. Exactly one of lr / preconditioner is set.
struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Sgd;
  std::optional<double> lr;
  std::optional<SymMatrix> preconditioner;
  double momentum = 0.0;
  double qhm_nu = 0.0;

  static OptimizerSpec sgd(double lr);
  static OptimizerSpec sgdm(double lr, double momentum);
  static OptimizerSpec qhm(double lr, double momentum, double nu);
  // Fixed matrix learning rate Λ; kind selects the label only.
  static OptimizerSpec preconditioned(OptimizerKind kind, SymMatrix lambda, double momentum);

  // Throws PreconditionError on violated invariants.
  void validate() const;
  // Λ as a matrix (λI for scalar rates).
  SymMatrix rate_matrix(Index dim) const;
};

enum class NoiseKind {
  Isotropic,
  HessianAligned,
  Mixed,
  Explicit,
  Minibatch,
  StateDependent,
  StudentT,
  ChiSquared,
};

const char* to_string(NoiseKind kind);
std::optional<NoiseKind> parse_noise_kind(const std::string& s);

// Gradient-noise model. Covariances:
//   Isotropic        σ² I
//   HessianAligned   a K
//   Mixed            σ² I + a K
//   Explicit         C
//   Minibatch        ((N − S)/(N S)) K
//   StateDependent   coefficient · K Σ K
//   StudentT         scale · I, independent t(dof) components rescaled to unit variance
//   ChiSquared       scale · I, independent centered χ²(dof) components rescaled to unit variance
struct NoiseSpec {
  NoiseKind kind = NoiseKind::Isotropic;
  double sigma2 = 0.0;
  double a = 0.0;
  std::optional<SymMatrix> covariance;
  long n_data = 0;
  long batch = 0;
  double coefficient = 0.0;
  double dof = 0.0;
  double scale = 0.0;

  static NoiseSpec isotropic(double sigma2);
  static NoiseSpec hessian_aligned(double a);
  static NoiseSpec mixed(double sigma2, double a);
  static NoiseSpec explicit_covariance(SymMatrix c);
  static NoiseSpec minibatch(long n_data, long batch);
  static NoiseSpec state_dependent(double coefficient);
  static NoiseSpec student_t(double dof, double scale);
  static NoiseSpec chi_squared(double dof, double scale);

  void validate() const;
  bool depends_on_state() const { return kind == NoiseKind::StateDependent; }
  // Throws PreconditionError for StateDependent without sigma.
  SymMatrix covariance_for(const QuadraticProblem& problem, const SymMatrix* sigma = nullptr) const;
};

// (N − S)/(N S)
double minibatch_coefficient(long n_data, long batch);

}  // namespace sgdstat
