#include "sgdstat/linalg.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "sgdstat/errors.hpp"

namespace sgdstat::linalg {

namespace {

double asymmetry_of(const Matrix& m) { return (m - m.transpose()).norm(); }

}  // namespace

SymMatrix::SymMatrix(const Matrix& m) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    throw PreconditionError("SymMatrix: matrix must be square with dim >= 1");
  }
  if (!m.allFinite()) throw PreconditionError("SymMatrix: non-finite entry");
  double scale = std::max(1.0, m.norm());
  if (asymmetry_of(m) > 1e-10 * scale) {
    throw PreconditionError("SymMatrix: matrix is not symmetric");
  }
  m_ = 0.5 * (m + m.transpose());
}

SymMatrix SymMatrix::symmetrize(const Matrix& m) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    throw PreconditionError("SymMatrix: matrix must be square with dim >= 1");
  }
  return SymMatrix(Matrix(0.5 * (m + m.transpose())), Trusted{});
}

SymMatrix SymMatrix::identity(Index dim) { return scalar(dim, 1.0); }

SymMatrix SymMatrix::zero(Index dim) { return scalar(dim, 0.0); }

SymMatrix SymMatrix::scalar(Index dim, double value) {
  if (dim < 1) throw PreconditionError("SymMatrix: dim must be >= 1");
  return SymMatrix(Matrix(value * Matrix::Identity(dim, dim)), Trusted{});
}

SymMatrix SymMatrix::diagonal(const Vector& d) {
  if (d.size() < 1) throw PreconditionError("SymMatrix: dim must be >= 1");
  return SymMatrix(Matrix(d.asDiagonal()), Trusted{});
}

SymMatrix SymMatrix::diagonal(std::initializer_list<double> d) {
  Vector v(static_cast<Index>(d.size()));
  Index i = 0;
  for (double x : d) v(i++) = x;
  return diagonal(v);
}

SymMatrix SymMatrix::operator+(const SymMatrix& o) const {
  return SymMatrix(Matrix(m_ + o.m_), Trusted{});
}

SymMatrix SymMatrix::operator-(const SymMatrix& o) const {
  return SymMatrix(Matrix(m_ - o.m_), Trusted{});
}

SymMatrix SymMatrix::operator*(double s) const { return SymMatrix(Matrix(s * m_), Trusted{}); }

EigenDecomposition sym_eigen(const SymMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix());
  if (es.info() != Eigen::Success) {
    // Eigen caps the tridiagonal QR at 30 sweeps per eigenvalue.
    int max_iters = static_cast<int>(30 * m.dim());
    throw NonConvergenceError(
        "sym_eigen: QR iteration did not converge within " + std::to_string(max_iters) + " sweeps",
        max_iters, std::nan(""));
  }
  EigenDecomposition out;
  out.eigenvalues = es.eigenvalues().reverse();
  out.eigenvectors = es.eigenvectors().rowwise().reverse();
  return out;
}

double max_eigenvalue(const SymMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix(), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(m.dim() - 1);
}

double min_eigenvalue(const SymMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix(), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

SymMatrix spd_sqrt(const SymMatrix& m) {
  EigenDecomposition e = sym_eigen(m);
  double lo = e.eigenvalues(m.dim() - 1);
  if (lo < -1e-12 * std::max(1.0, std::abs(e.eigenvalues(0)))) {
    std::ostringstream os;
    os << "spd_sqrt: matrix has negative eigenvalue " << lo;
    throw NotPsdError(os.str());
  }
  Vector r = e.eigenvalues.cwiseMax(0.0).cwiseSqrt();
  return SymMatrix::symmetrize(e.eigenvectors * r.asDiagonal() * e.eigenvectors.transpose());
}

SymMatrix spd_inverse(const SymMatrix& m) {
  EigenDecomposition e = sym_eigen(m);
  if (!(e.eigenvalues(m.dim() - 1) > 0.0)) {
    throw NotPsdError("spd_inverse: matrix is not positive definite");
  }
  Vector r = e.eigenvalues.cwiseInverse();
  return SymMatrix::symmetrize(e.eigenvectors * r.asDiagonal() * e.eigenvectors.transpose());
}

double log_det_spd(const SymMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix(), Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues()(0) > 0.0)) {
    throw NotPsdError("log_det_spd: matrix is not positive definite");
  }
  return es.eigenvalues().array().log().sum();
}

// Rank-deficient Gram matrices come out with eigenvalues at rounding level, so
// "positive" is measured against the largest eigenvalue.
bool is_positive_definite(const SymMatrix& m) {
  const Vector ev = sym_eigen(m).eigenvalues;
  return ev.minCoeff() > 1e-13 * std::abs(ev.maxCoeff());
}

bool is_psd(const SymMatrix& m, double tol) {
  return min_eigenvalue(m) >= -tol * std::max(1.0, m.norm());
}

double commutator_norm(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw PreconditionError("commutator_norm: dimension mismatch");
  }
  return (a * b - b * a).norm();
}

double spectral_radius(const Matrix& a) {
  Eigen::EigenSolver<Matrix> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix apply_terms(std::span<const MatrixEquationTerm> terms, const Matrix& x) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (const auto& t : terms) {
    if (t.transposed) {
      out.noalias() += t.coefficient * (t.left * x.transpose() * t.right);
    } else {
      out.noalias() += t.coefficient * (t.left * x * t.right);
    }
  }
  return out;
}

double relative_residual(std::span<const MatrixEquationTerm> terms, const Matrix& x,
                         const Matrix& rhs) {
  double r = (apply_terms(terms, x) - rhs).norm();
  double n = rhs.norm();
  return n > 0.0 ? r / n : r;
}

void accumulate_kron(Eigen::Ref<Matrix> block, const MatrixEquationTerm& term) {
  const Index d = term.left.rows();
  const Matrix& l = term.left;
  const Matrix& r = term.right;
  const double c = term.coefficient;
  // Row i + jD is entry (i, j) of the image; (L X R)_ij = Σ L_ik X_kl R_lj.
  for (Index j = 0; j < d; ++j) {
    for (Index ll = 0; ll < d; ++ll) {
      double rlj = c * r(ll, j);
      if (rlj == 0.0) continue;
      for (Index k = 0; k < d; ++k) {
        Index col = term.transposed ? ll + k * d : k + ll * d;
        for (Index i = 0; i < d; ++i) {
          block(i + j * d, col) += l(i, k) * rlj;
        }
      }
    }
  }
}

LinearMatrixSystem::LinearMatrixSystem(Index dim, int n_unknowns)
    : dim_(dim), n_(n_unknowns), terms_(n_unknowns), rhs_(n_unknowns, Matrix::Zero(dim, dim)) {
  if (dim < 1 || n_unknowns < 1) {
    throw PreconditionError("LinearMatrixSystem: dim and unknown count must be >= 1");
  }
}

void LinearMatrixSystem::add(int equation, int unknown, MatrixEquationTerm term) {
  if (equation < 0 || equation >= n_ || unknown < 0 || unknown >= n_) {
    throw PreconditionError("LinearMatrixSystem: equation/unknown index out of range");
  }
  if (term.left.rows() != dim_ || term.left.cols() != dim_ || term.right.rows() != dim_ ||
      term.right.cols() != dim_) {
    throw PreconditionError("LinearMatrixSystem: term dimension mismatch");
  }
  terms_[equation].emplace_back(unknown, std::move(term));
}

void LinearMatrixSystem::set_rhs(int equation, const Matrix& rhs) {
  if (rhs.rows() != dim_ || rhs.cols() != dim_) {
    throw PreconditionError("LinearMatrixSystem: rhs dimension mismatch");
  }
  rhs_.at(equation) = rhs;
}

std::vector<Matrix> LinearMatrixSystem::solve(SolveReport* report) const {
  const Index d2 = dim_ * dim_;
  const Index n = d2 * n_;
  Matrix big = Matrix::Zero(n, n);
  Vector b(n);
  for (int e = 0; e < n_; ++e) {
    for (const auto& [u, term] : terms_[e]) {
      accumulate_kron(big.block(e * d2, u * d2, d2, d2), term);
    }
    b.segment(e * d2, d2) = Eigen::Map<const Vector>(rhs_[e].data(), d2);
  }
  Eigen::PartialPivLU<Matrix> lu(big);
  double rcond = lu.rcond();
  double cond = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (!(cond <= kConditionThreshold)) {
    std::ostringstream os;
    os << "linear matrix equation is singular or ill-conditioned (condition estimate " << cond
       << ")";
    throw UnstableConfigurationError(os.str());
  }
  Vector x = lu.solve(b);
  double bn = b.norm();
  double res = (big * x - b).norm();
  if (bn > 0.0) res /= bn;
  if (!(res < kResidualTolerance)) {
    std::ostringstream os;
    os << "linear matrix equation residual " << res << " exceeds tolerance";
    throw UnstableConfigurationError(os.str());
  }
  std::vector<Matrix> out;
  out.reserve(n_);
  for (int u = 0; u < n_; ++u) {
    out.emplace_back(Eigen::Map<const Matrix>(x.data() + u * d2, dim_, dim_));
  }
  if (report) {
    report->condition_estimate = cond;
    report->residual = res;
  }
  return out;
}

double LinearMatrixSystem::residual(int equation, const std::vector<Matrix>& unknowns) const {
  Matrix acc = -rhs_.at(equation);
  for (const auto& [u, term] : terms_[equation]) {
    MatrixEquationTerm t = term;
    acc += apply_terms(std::span<const MatrixEquationTerm>(&t, 1), unknowns.at(u));
  }
  double n = rhs_[equation].norm();
  return n > 0.0 ? acc.norm() / n : acc.norm();
}

SymMatrix solve_linear_matrix_equation(std::span<const MatrixEquationTerm> terms,
                                       const SymMatrix& rhs, SolveReport* report) {
  LinearMatrixSystem sys(rhs.dim(), 1);
  for (const auto& t : terms) sys.add(0, 0, t);
  sys.set_rhs(0, rhs.matrix());
  SolveReport local;
  Matrix x = std::move(sys.solve(&local)[0]);
  double scale = std::max(x.norm(), std::numeric_limits<double>::min());
  local.asymmetry = asymmetry_of(x) / scale;
  if (local.asymmetry > kAsymmetryTolerance) {
    std::ostringstream os;
    os << "matrix equation solution is asymmetric (relative " << local.asymmetry << ")";
    throw UnstableConfigurationError(os.str());
  }
  SymMatrix out = SymMatrix::symmetrize(x);
  local.residual = relative_residual(terms, out.matrix(), rhs.matrix());
  if (report) *report = local;
  return out;
}

SymMatrix discrete_lyapunov(const Matrix& a, const SymMatrix& s, SolveReport* report) {
  if (a.rows() != s.dim() || a.cols() != s.dim()) {
    throw PreconditionError("discrete_lyapunov: dimension mismatch");
  }
  double rho = spectral_radius(a);
  if (!(rho < 1.0)) {
    std::ostringstream os;
    os << "discrete_lyapunov: spectral radius " << rho << " >= 1, series diverges";
    throw DivergentSeriesError(os.str());
  }
  const Index d = s.dim();
  MatrixEquationTerm terms[2] = {
      {1.0, Matrix::Identity(d, d), Matrix::Identity(d, d)},
      {-1.0, a, a.transpose()},
  };
  return solve_linear_matrix_equation(terms, s, report);
}

}  // namespace sgdstat::linalg
