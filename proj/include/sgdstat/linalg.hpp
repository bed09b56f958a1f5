#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace sgdstat::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kEigenTolerance = 1e-12;
inline constexpr double kResidualTolerance = 1e-10;
inline constexpr double kAsymmetryTolerance = 1e-8;
inline constexpr double kConditionThreshold = 1e12;

// Dense symmetric matrix. Entries are exactly symmetric after construction.
class SymMatrix {
 public:
  // Throws PreconditionError if m is not square, empty, non-finite, or
  // asymmetric beyond 1e-10 relative. The stored value is (m + mᵀ)/2.
  explicit SymMatrix(const Matrix& m);

  // Symmetrizes without checking.
  static SymMatrix symmetrize(const Matrix& m);
  static SymMatrix identity(Index dim);
  static SymMatrix zero(Index dim);
  static SymMatrix scalar(Index dim, double value);
  static SymMatrix diagonal(const Vector& d);
  static SymMatrix diagonal(std::initializer_list<double> d);

  Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Index i, Index j) const { return m_(i, j); }
  double trace() const { return m_.trace(); }
  double norm() const { return m_.norm(); }

  SymMatrix operator+(const SymMatrix& o) const;
  SymMatrix operator-(const SymMatrix& o) const;
  SymMatrix operator*(double s) const;
  friend SymMatrix operator*(double s, const SymMatrix& a) { return a * s; }

 private:
  struct Trusted {};
  SymMatrix(Matrix m, Trusted) : m_(std::move(m)) {}
  Matrix m_;
};

struct EigenDecomposition {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns
};

EigenDecomposition sym_eigen(const SymMatrix& m);
double max_eigenvalue(const SymMatrix& m);
double min_eigenvalue(const SymMatrix& m);

// f applied to the spectrum: V diag(f(k)) Vᵀ.
template <typename F>
SymMatrix spectral_map(const SymMatrix& m, F f) {
  EigenDecomposition e = sym_eigen(m);
  Vector fk = e.eigenvalues.unaryExpr(f);
  return SymMatrix::symmetrize(e.eigenvectors * fk.asDiagonal() * e.eigenvectors.transpose());
}

SymMatrix spd_sqrt(const SymMatrix& m);
SymMatrix spd_inverse(const SymMatrix& m);
double log_det_spd(const SymMatrix& m);
bool is_positive_definite(const SymMatrix& m);
// Smallest eigenvalue ≥ -tol·max(1, ‖m‖).
bool is_psd(const SymMatrix& m, double tol = 1e-12);

double commutator_norm(const Matrix& a, const Matrix& b);
double spectral_radius(const Matrix& a);

// One summand c·L·X·R (or c·L·Xᵀ·R when transposed) of a linear matrix equation.
struct MatrixEquationTerm {
  double coefficient;
  Matrix left;
  Matrix right;
  bool transposed = false;
};

struct SolveReport {
  double condition_estimate = 0.0;
  double residual = 0.0;
  double asymmetry = 0.0;
};

// Σᵢ cᵢ Lᵢ X Rᵢ
Matrix apply_terms(std::span<const MatrixEquationTerm> terms, const Matrix& x);
double relative_residual(std::span<const MatrixEquationTerm> terms, const Matrix& x,
                         const Matrix& rhs);

// Several matrix unknowns coupled by as many linear matrix equations,
// solved jointly through the Kronecker-vectorized system.
class LinearMatrixSystem {
 public:
  LinearMatrixSystem(Index dim, int n_unknowns);
  void add(int equation, int unknown, MatrixEquationTerm term);
  void set_rhs(int equation, const Matrix& rhs);
  // Throws UnstableConfigurationError when the estimated condition number
  // exceeds kConditionThreshold or the residual check fails.
  std::vector<Matrix> solve(SolveReport* report = nullptr) const;
  double residual(int equation, const std::vector<Matrix>& unknowns) const;

 private:
  Index dim_;
  int n_;
  std::vector<std::vector<std::pair<int, MatrixEquationTerm>>> terms_;
  std::vector<Matrix> rhs_;
};

// Adds (Rᵀ ⊗ L) or its column-permuted transpose variant, scaled, into block.
void accumulate_kron(Eigen::Ref<Matrix> block, const MatrixEquationTerm& term);

// Solves Σᵢ cᵢ Lᵢ X Rᵢ = rhs for a symmetric X. Throws when the solution is
// asymmetric beyond kAsymmetryTolerance.
SymMatrix solve_linear_matrix_equation(std::span<const MatrixEquationTerm> terms,
                                       const SymMatrix& rhs, SolveReport* report = nullptr);

// Q − A Q Aᵀ = S. Throws DivergentSeriesError when ρ(A) ≥ 1.
SymMatrix discrete_lyapunov(const Matrix& a, const SymMatrix& s, SolveReport* report = nullptr);

}  // namespace sgdstat::linalg
