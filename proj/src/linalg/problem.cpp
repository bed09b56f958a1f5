#include "sgdstat/problem.hpp"

#include <cmath>

#include "sgdstat/errors.hpp"

namespace sgdstat {

QuadraticProblem::QuadraticProblem(SymMatrix hessian)
    : QuadraticProblem(hessian, Vector::Zero(hessian.dim())) {}

QuadraticProblem::QuadraticProblem(SymMatrix hessian, Vector optimum)
    : hessian_(std::move(hessian)), optimum_(std::move(optimum)), eigen_(linalg::sym_eigen(hessian_)) {
  if (optimum_.size() != hessian_.dim()) {
    throw PreconditionError("QuadraticProblem: optimum dimension does not match the Hessian");
  }
  if (!optimum_.allFinite()) throw PreconditionError("QuadraticProblem: optimum must be finite");
  if (!(eigen_.eigenvalues(dim() - 1) > 0.0)) {
    throw PreconditionError("QuadraticProblem: Hessian must be positive definite");
  }
}

const char* to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Sgdm: return "sgdm";
    case OptimizerKind::Qhm: return "qhm";
    case OptimizerKind::Dnm: return "dnm";
    case OptimizerKind::Ngd: return "ngd";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

std::optional<OptimizerKind> parse_optimizer_kind(const std::string& s) {
  for (auto k : {OptimizerKind::Sgd, OptimizerKind::Sgdm, OptimizerKind::Qhm, OptimizerKind::Dnm,
                 OptimizerKind::Ngd, OptimizerKind::Adam}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

OptimizerSpec OptimizerSpec::sgd(double lr) {
  OptimizerSpec o;
  o.kind = OptimizerKind::Sgd;
  o.lr = lr;
  o.validate();
  return o;
}

OptimizerSpec OptimizerSpec::sgdm(double lr, double momentum) {
  OptimizerSpec o;
  o.kind = OptimizerKind::Sgdm;
  o.lr = lr;
  o.momentum = momentum;
  o.validate();
  return o;
}

OptimizerSpec OptimizerSpec::qhm(double lr, double momentum, double nu) {
  OptimizerSpec o;
  o.kind = OptimizerKind::Qhm;
  o.lr = lr;
  o.momentum = momentum;
  o.qhm_nu = nu;
  o.validate();
  return o;
}

OptimizerSpec OptimizerSpec::preconditioned(OptimizerKind kind, SymMatrix lambda, double momentum) {
  OptimizerSpec o;
  o.kind = kind;
  o.preconditioner = std::move(lambda);
  o.momentum = momentum;
  o.validate();
  return o;
}

void OptimizerSpec::validate() const {
  if (lr.has_value() == preconditioner.has_value()) {
    throw PreconditionError("optimizer: exactly one of lr and preconditioner must be set");
  }
  if (lr && !(*lr > 0.0 && std::isfinite(*lr))) {
    throw PreconditionError("optimizer: lr must be positive and finite");
  }
  if (preconditioner && !linalg::is_positive_definite(*preconditioner)) {
    throw PreconditionError("optimizer: preconditioner must be positive definite");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw PreconditionError("momentum must be in [0,1)");
  }
  if (kind == OptimizerKind::Sgd && momentum != 0.0) {
    throw PreconditionError("optimizer: sgd takes no momentum");
  }
  if (!(qhm_nu >= 0.0 && qhm_nu <= 1.0)) throw PreconditionError("qhm nu must be in [0,1]");
  if (kind == OptimizerKind::Qhm && preconditioner) {
    throw PreconditionError("optimizer: qhm takes a scalar lr");
  }
}

SymMatrix OptimizerSpec::rate_matrix(Index dim) const {
  if (preconditioner) {
    if (preconditioner->dim() != dim) throw PreconditionError("optimizer: preconditioner dimension");
    return *preconditioner;
  }
  return SymMatrix::scalar(dim, *lr);
}

const char* to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::Isotropic: return "isotropic";
    case NoiseKind::HessianAligned: return "hessian_aligned";
    case NoiseKind::Mixed: return "mixed";
    case NoiseKind::Explicit: return "explicit";
    case NoiseKind::Minibatch: return "minibatch";
    case NoiseKind::StateDependent: return "state_dependent";
    case NoiseKind::StudentT: return "student_t";
    case NoiseKind::ChiSquared: return "chi_squared";
  }
  return "?";
}

std::optional<NoiseKind> parse_noise_kind(const std::string& s) {
  for (auto k : {NoiseKind::Isotropic, NoiseKind::HessianAligned, NoiseKind::Mixed,
                 NoiseKind::Explicit, NoiseKind::Minibatch, NoiseKind::StateDependent,
                 NoiseKind::StudentT, NoiseKind::ChiSquared}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

NoiseSpec NoiseSpec::isotropic(double sigma2) {
  NoiseSpec n;
  n.kind = NoiseKind::Isotropic;
  n.sigma2 = sigma2;
  n.validate();
  return n;
}

NoiseSpec NoiseSpec::hessian_aligned(double a) {
  NoiseSpec n;
  n.kind = NoiseKind::HessianAligned;
  n.a = a;
  n.validate();
  return n;
}

NoiseSpec NoiseSpec::mixed(double sigma2, double a) {
  NoiseSpec n;
  n.kind = NoiseKind::Mixed;
  n.sigma2 = sigma2;
  n.a = a;
  n.validate();
  return n;
}

NoiseSpec NoiseSpec::explicit_covariance(SymMatrix c) {
  NoiseSpec n;
  n.kind = NoiseKind::Explicit;
  n.covariance = std::move(c);
  n.validate();
  return n;
}

NoiseSpec NoiseSpec::minibatch(long n_data, long batch) {
  NoiseSpec n;
  n.kind = NoiseKind::Minibatch;
  n.n_data = n_data;
  n.batch = batch;
  n.validate();
  return n;
}

NoiseSpec NoiseSpec::state_dependent(double coefficient) {
  NoiseSpec n;
  n.kind = NoiseKind::StateDependent;
  n.coefficient = coefficient;
  n.validate();
  return n;
}

NoiseSpec NoiseSpec::student_t(double dof, double scale) {
  NoiseSpec n;
  n.kind = NoiseKind::StudentT;
  n.dof = dof;
  n.scale = scale;
  n.validate();
  return n;
}

NoiseSpec NoiseSpec::chi_squared(double dof, double scale) {
  NoiseSpec n;
  n.kind = NoiseKind::ChiSquared;
  n.dof = dof;
  n.scale = scale;
  n.validate();
  return n;
}

void NoiseSpec::validate() const {
  auto nonneg = [](double v, const char* what) {
    if (!(v >= 0.0 && std::isfinite(v))) {
      throw PreconditionError(std::string("noise: ") + what + " must be >= 0");
    }
  };
  switch (kind) {
    case NoiseKind::Isotropic: nonneg(sigma2, "sigma2"); break;
    case NoiseKind::HessianAligned: nonneg(a, "a"); break;
    case NoiseKind::Mixed:
      nonneg(sigma2, "sigma2");
      nonneg(a, "a");
      break;
    case NoiseKind::Explicit:
      if (!covariance) throw PreconditionError("noise: explicit covariance missing");
      if (!linalg::is_psd(*covariance)) throw PreconditionError("noise: covariance must be PSD");
      break;
    case NoiseKind::Minibatch:
      if (n_data < 1 || batch < 1) throw PreconditionError("noise: N and S must be >= 1");
      if (batch > n_data) throw PreconditionError("noise: batch S must not exceed n_data N");
      break;
    case NoiseKind::StateDependent: nonneg(coefficient, "coefficient"); break;
    case NoiseKind::StudentT:
      if (!(dof > 2.0)) throw PreconditionError("noise: student_t needs dof > 2 for finite variance");
      nonneg(scale, "scale");
      break;
    case NoiseKind::ChiSquared:
      if (!(dof > 0.0)) throw PreconditionError("noise: chi_squared needs dof > 0");
      nonneg(scale, "scale");
      break;
  }
}

double minibatch_coefficient(long n_data, long batch) {
  if (n_data < 1 || batch < 1 || batch > n_data) {
    throw PreconditionError("minibatch: need 1 <= S <= N");
  }
  return static_cast<double>(n_data - batch) /
         (static_cast<double>(n_data) * static_cast<double>(batch));
}

SymMatrix NoiseSpec::covariance_for(const QuadraticProblem& problem, const SymMatrix* sigma) const {
  const Index d = problem.dim();
  const SymMatrix& k = problem.hessian();
  switch (kind) {
    case NoiseKind::Isotropic: return SymMatrix::scalar(d, sigma2);
    case NoiseKind::HessianAligned: return k * a;
    case NoiseKind::Mixed: return SymMatrix::scalar(d, sigma2) + k * a;
    case NoiseKind::Explicit:
      if (covariance->dim() != d) throw PreconditionError("noise: covariance dimension mismatch");
      return *covariance;
    case NoiseKind::Minibatch: return k * minibatch_coefficient(n_data, batch);
    case NoiseKind::StateDependent:
      if (!sigma) throw PreconditionError("noise: state-dependent covariance needs Σ");
      return SymMatrix::symmetrize(coefficient * k.matrix() * sigma->matrix() * k.matrix());
    case NoiseKind::StudentT:
    case NoiseKind::ChiSquared: return SymMatrix::scalar(d, scale);
  }
  throw PreconditionError("noise: unknown kind");
}

}  // namespace sgdstat
