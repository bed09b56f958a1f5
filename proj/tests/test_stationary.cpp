#include "doctest.h"
#include "oracles.hpp"
#include "sgdstat/errors.hpp"
#include "sgdstat/stationary.hpp"

using namespace sgdstat;
using namespace sgdstat::stationary;
using doctest::Approx;

namespace {

QuadraticProblem scalar_problem(double k) { return QuadraticProblem(SymMatrix::diagonal({k})); }

QuadraticProblem diag_problem() { return QuadraticProblem(SymMatrix::diagonal({1.0, 0.1})); }

double entry(const StationaryPrediction& p, Index i = 0, Index j = 0) { return p.sigma(i, j); }

// Random non-commuting pair with λ at a fraction of the stability limit.
struct Instance {
  Matrix k, c;
  double lr, mu;
};

Instance random_instance(Index dim, std::mt19937_64& rng, double frac, double mu) {
  Instance in;
  in.k = oracle::random_spd(dim, rng);
  in.c = oracle::random_spd(dim, rng);
  in.mu = mu;
  in.lr = frac * 2.0 * (1.0 + mu) / oracle::power_iteration(in.k);
  return in;
}

}  // namespace

TEST_SUITE("stationary") {

TEST_CASE("continuous baseline") {
  CHECK(entry(continuous_covariance(scalar_problem(1.0), SymMatrix::identity(1), 1.0)) ==
        Approx(0.5));
  auto p = continuous_covariance(diag_problem(), SymMatrix::identity(2), 0.3);
  CHECK(p.sigma(0, 0) == Approx(0.15));
  CHECK(p.sigma(1, 1) == Approx(1.5));
  CHECK(p.method == Method::Continuous);
  CHECK(continuous_covariance(diag_problem(), SymMatrix::zero(2), 0.3).sigma.norm() == 0.0);
}

TEST_CASE("SGD examples") {
  CHECK(entry(solve_sgd_covariance(scalar_problem(1.0), SymMatrix::identity(1), 1.0)) ==
        Approx(1.0).epsilon(1e-13));
  auto p = solve_sgd_covariance(diag_problem(), SymMatrix::identity(2), 1.8);
  CHECK(p.sigma(0, 0) == Approx(9.0).epsilon(1e-12));
  CHECK(p.sigma(1, 1) == Approx(1.8 / (0.1 * (2.0 - 0.18))).epsilon(1e-12));
  CHECK(p.sigma(1, 1) == Approx(9.8901).epsilon(1e-5));
  CHECK(solve_sgd_covariance(diag_problem(), SymMatrix::zero(2), 1.8).sigma.norm() == 0.0);
  CHECK_THROWS_AS(solve_sgd_covariance(diag_problem(), SymMatrix::identity(2), 2.0),
                  InstabilityError);
}

TEST_CASE("SGD matches the augmented-state oracle for non-commuting K, C") {
  std::mt19937_64 rng(21);
  for (Index dim : {1, 2, 3, 5}) {
    auto in = random_instance(dim, rng, 0.8, 0.0);
    auto p = solve_sgd_covariance(QuadraticProblem(SymMatrix(in.k)), SymMatrix(in.c), in.lr);
    Matrix ref = oracle::augmented_covariance(in.k, in.lr * Matrix::Identity(dim, dim), in.c, 0.0,
                                              1.0, 1.0);
    CHECK(oracle::rel(p.sigma.matrix(), ref) < 1e-9);
    CHECK(p.train_error == Approx(0.5 * (in.k * p.sigma.matrix()).trace()).epsilon(1e-10));
  }
}

TEST_CASE("SGDM examples and oracle") {
  auto one = SymMatrix::identity(1);
  CHECK(entry(solve_sgdm_covariance(scalar_problem(1.0), one, 1.0, 0.5)) ==
        Approx(1.5).epsilon(1e-12));
  auto a = solve_sgdm_covariance(diag_problem(), SymMatrix::identity(2), 1.3, 0.0);
  auto b = solve_sgd_covariance(diag_problem(), SymMatrix::identity(2), 1.3);
  CHECK((a.sigma.matrix() - b.sigma.matrix()).norm() < 1e-12 * b.sigma.norm());
  CHECK_THROWS_AS(solve_sgdm_covariance(scalar_problem(1.0), one, 3.0, 0.5), InstabilityError);

  std::mt19937_64 rng(22);
  for (double mu : {0.3, 0.6, 0.9}) {
    auto in = random_instance(3, rng, 0.7, mu);
    auto p = solve_sgdm_covariance(QuadraticProblem(SymMatrix(in.k)), SymMatrix(in.c), in.lr, mu);
    Matrix ref =
        oracle::augmented_covariance(in.k, in.lr * Matrix::Identity(3, 3), in.c, mu, 1.0, 1.0);
    CHECK(oracle::rel(p.sigma.matrix(), ref) < 1e-9);
  }
}

TEST_CASE("closed form for commuting noise") {
  auto one = SymMatrix::identity(1);
  CHECK(entry(closed_form_commuting(scalar_problem(1.0), one, 1.0, 0.5)) == Approx(1.5));
  auto i2 = SymMatrix::identity(2);
  CHECK((closed_form_commuting(QuadraticProblem(i2), i2, 1.0, 0.0).sigma.matrix() -
         Matrix::Identity(2, 2))
            .norm() < 1e-14);
  auto p = closed_form_commuting(diag_problem(), SymMatrix::diagonal({2.0, 0.5}), 1.1, 0.4);
  auto q = solve_sgdm_covariance(diag_problem(), SymMatrix::diagonal({2.0, 0.5}), 1.1, 0.4);
  CHECK(oracle::rel(p.sigma.matrix(), q.sigma.matrix()) < 1e-9);
  Matrix c(2, 2);
  c << 1.0, 0.3, 0.3, 1.0;
  CHECK_THROWS_AS(closed_form_commuting(diag_problem(), SymMatrix(c), 1.0, 0.0),
                  PreconditionError);
}

TEST_CASE("mixed noise") {
  CHECK(entry(mixed_noise_covariance(scalar_problem(1.0), 0.0, 0.01, 1.0)) == Approx(0.01));
  auto p = mixed_noise_covariance(diag_problem(), 0.5, 0.2, 1.5);
  for (Index i = 0; i < 2; ++i) {
    double k = i == 0 ? 1.0 : 0.1;
    CHECK(p.sigma(i, i) == Approx(1.5 * (0.5 + 0.2 * k) / (k * (2.0 - 1.5 * k))));
  }
}

TEST_CASE("preconditioned equation") {
  auto lam = SymMatrix::scalar(2, 0.9);
  auto c = SymMatrix::diagonal({1.0, 3.0});
  auto a = solve_preconditioned_covariance(diag_problem(), c, lam, 0.2);
  auto b = solve_sgdm_covariance(diag_problem(), c, 0.9, 0.2);
  CHECK(oracle::rel(a.sigma.matrix(), b.sigma.matrix()) < 1e-10);

  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 5; ++rep) {
    Matrix k = oracle::random_spd(4, rng);
    Matrix cc = oracle::random_spd(4, rng);
    Matrix l = oracle::random_spd(4, rng);
    // scale Λ so that Λ^{1/2}KΛ^{1/2} stays inside the stability region
    Eigen::SelfAdjointEigenSolver<Matrix> es(l);
    Matrix r = es.operatorSqrt();
    double top = oracle::power_iteration(r * k * r);
    l *= 1.2 / top;
    double mu = 0.25;
    auto p = solve_preconditioned_covariance(QuadraticProblem(SymMatrix(k)), SymMatrix(cc),
                                             SymMatrix(l), mu);
    Matrix ref = oracle::augmented_covariance(k, l, cc, mu, 1.0, 1.0);
    CHECK(oracle::rel(p.sigma.matrix(), ref) < 1e-9);
  }
}

TEST_CASE("train error formula") {
  auto i2 = SymMatrix::identity(2);
  CHECK(train_error_sgdm(QuadraticProblem(i2), i2, 1.0, 0.0) == Approx(1.0));
  CHECK(train_error_sgdm(diag_problem(), SymMatrix::zero(2), 1.0, 0.3) == 0.0);
  double small = 1e-6;
  auto c = SymMatrix::diagonal({1.0, 2.0});
  CHECK(train_error_sgdm(diag_problem(), c, small, 0.4) / small ==
        Approx(3.0 / (4.0 * 0.6)).epsilon(1e-5));
  std::mt19937_64 rng(24);
  auto in = random_instance(3, rng, 0.9, 0.5);
  QuadraticProblem pr{SymMatrix(in.k)};
  auto p = solve_sgdm_covariance(pr, SymMatrix(in.c), in.lr, in.mu);
  CHECK(train_error_sgdm(pr, SymMatrix(in.c), in.lr, in.mu) ==
        Approx(0.5 * (in.k * p.sigma.matrix()).trace()).epsilon(1e-9));
}

TEST_CASE("QHM system against the augmented oracle") {
  std::mt19937_64 rng(25);
  for (int rep = 0; rep < 6; ++rep) {
    Matrix k = oracle::random_spd(3, rng);
    Matrix c = oracle::random_spd(3, rng);
    double mu = 0.2 + 0.12 * rep;
    double nu = 0.15 * rep + 0.1;
    double lr = 0.8 / oracle::power_iteration(k);
    QuadraticProblem pr{SymMatrix(k)};
    auto s = solve_qhm_system(pr, SymMatrix(c), lr, mu, nu);
    Matrix ref =
        oracle::augmented_covariance(k, lr * Matrix::Identity(3, 3), c, mu, 1.0 - mu, nu);
    CHECK(oracle::rel(s.prediction.sigma.matrix(), ref) < 1e-9);
    for (double r : s.residuals) CHECK(r < 1e-9);
    CHECK(qhm_train_error_hK(pr, SymMatrix(c), lr, mu, nu) ==
          Approx(0.5 * (k * s.prediction.sigma.matrix()).trace()).epsilon(1e-8));
  }
}

TEST_CASE("QHM reductions") {
  auto c = SymMatrix::diagonal({1.0, 0.5});
  auto p = diag_problem();
  auto nu0 = solve_qhm_system(p, c, 1.2, 0.7, 0.0).prediction.sigma;
  CHECK(oracle::rel(nu0.matrix(), solve_sgd_covariance(p, c, 1.2).sigma.matrix()) < 1e-8);
  auto nu1 = solve_qhm_system(p, c, 1.2, 0.7, 1.0).prediction.sigma;
  CHECK(oracle::rel(nu1.matrix(), solve_sgdm_covariance(p, c, 1.2 * 0.3, 0.7).sigma.matrix()) <
        1e-8);
  auto mu0 = solve_qhm_system(p, c, 1.2, 0.0, 0.6);
  CHECK(oracle::rel(mu0.prediction.sigma.matrix(), solve_sgd_covariance(p, c, 1.2).sigma.matrix()) <
        1e-8);
  CHECK(oracle::rel(mu0.q.matrix(), mu0.prediction.sigma.matrix()) < 1e-10);
  CHECK(qhm_train_error_hK(p, c, 1.0, 0.0, 0.0) == Approx(train_error_sgdm(p, c, 1.0, 0.0)));
  CHECK(qhm_train_error_hK(p, SymMatrix::zero(2), 1.0, 0.5, 0.5) == 0.0);
  auto one = scalar_problem(1.0);
  auto s1 = solve_qhm_system(one, SymMatrix::identity(1), 0.5, 0.9, 0.7);
  CHECK(qhm_train_error_hK(one, SymMatrix::identity(1), 0.5, 0.9, 0.7) ==
        Approx(0.5 * s1.prediction.sigma(0, 0)).epsilon(1e-8));
}

TEST_CASE("DNM") {
  QuadraticProblem p(SymMatrix::diagonal({2.0, 0.5}));
  auto c = p.hessian() * 0.009;
  auto s = dnm_covariance(p, c, 1.0, 0.0);
  CHECK(s.sigma(0, 0) == Approx(0.0045));
  CHECK(s.sigma(1, 1) == Approx(0.018));
  CHECK(dnm_covariance(p, SymMatrix::zero(2), 1.0, 0.3).sigma.norm() == 0.0);
  CHECK_THROWS_AS(dnm_covariance(p, c, 2.6, 0.3), InstabilityError);

  std::mt19937_64 rng(26);
  Matrix k = oracle::random_spd(3, rng);
  Matrix cc = oracle::random_spd(3, rng);
  QuadraticProblem pr{SymMatrix(k)};
  for (double mu : {0.0, 0.5}) {
    auto a = dnm_covariance(pr, SymMatrix(cc), 0.7, mu);
    auto b = solve_preconditioned_covariance(pr, SymMatrix(cc), SymMatrix(0.7 * k.inverse()), mu);
    CHECK(oracle::rel(a.sigma.matrix(), b.sigma.matrix()) < 1e-10);
    CHECK(train_error_dnm(pr, SymMatrix(cc), 0.7, mu) ==
          Approx(0.5 * (k * a.sigma.matrix()).trace()).epsilon(1e-8));
  }
}

TEST_CASE("NGD") {
  QuadraticProblem two = scalar_problem(2.0);
  auto s = ngd_covariance(two, SymMatrix::identity(1), 0.5, 0.0);
  // (2Σ)² − 0.25(2Σ) − 0.125 = 0
  double x = (0.25 + std::sqrt(0.0625 + 4.0 * 0.125)) / 2.0;
  CHECK(s.sigma(0, 0) == Approx(x / 2.0).epsilon(1e-13));
  CHECK(ngd_equation_residual(two, s.sigma, SymMatrix::identity(1), 0.5, 0.0) < 1e-9);

  auto p = diag_problem();
  auto zero = ngd_covariance(p, SymMatrix::zero(2), 0.4, 0.3);
  CHECK(zero.sigma(0, 0) == Approx(0.4 / 2.6));
  CHECK(zero.sigma(1, 1) == Approx(4.0 / 2.6));
  auto full = ngd_covariance_minibatch(p, 500, 500, 0.4, 0.3);
  CHECK(oracle::rel(full.sigma.matrix(), zero.sigma.matrix()) < 1e-14);

  auto mb = ngd_covariance_minibatch(p, 1000, 100, 0.5, 0.2);
  double q = 0.009;
  double coef = 0.5 * (1.2 * q + 0.8) / (2.0 * (1.0 - 0.04));
  CHECK(mb.sigma(0, 0) == Approx(coef));
  CHECK(mb.sigma(1, 1) == Approx(10.0 * coef));
  CHECK(linalg::commutator_norm(mb.sigma.matrix(), p.hessian().matrix()) < 1e-10);
  Matrix noise = q * p.hessian().matrix() * mb.sigma.matrix() * p.hessian().matrix();
  CHECK(ngd_equation_residual(p, mb.sigma, SymMatrix(noise), 0.5, 0.2) < 1e-9);
  CHECK(train_error_ngd_minibatch(2, 1000, 100, 0.5, 0.2) ==
        Approx(0.5 * (p.hessian().matrix() * mb.sigma.matrix()).trace()));

  Matrix c(2, 2);
  c << 1.0, 0.3, 0.3, 1.0;
  CHECK_THROWS_AS(ngd_covariance(p, SymMatrix(c), 0.5, 0.0), PreconditionError);
}

TEST_CASE("Adam") {
  auto a = adam_covariance(0.1, 1.0, 3);
  CHECK(a.sigma(0, 0) == Approx(0.005));
  CHECK(a.sigma(2, 2) == Approx(0.005));
  CHECK(a.sigma(0, 1) == 0.0);
  CHECK(adam_covariance(0.3, 0.0, 1).sigma(0, 0) == Approx(0.0225));
  CHECK(train_error_adam(diag_problem(), 0.1, 1.0) == Approx(0.00275));
  auto b = adam_covariance(diag_problem(), 0.1, 1.0);
  CHECK(b.train_error == Approx(0.00275));
  CHECK(b.residual < 1e-9);
}

TEST_CASE("state-dependent fixed point") {
  auto p = diag_problem();
  auto c0 = SymMatrix::diagonal({1.0, 2.0});
  auto fp = state_dependent_fixed_point(p, [&](const SymMatrix&) { return c0; }, 1.1, 0.3);
  CHECK(oracle::rel(fp.sigma.matrix(), solve_sgdm_covariance(p, c0, 1.1, 0.3).sigma.matrix()) <
        1e-10);
  auto zero = state_dependent_fixed_point(
      p, [&](const SymMatrix&) { return SymMatrix::zero(2); }, 1.1, 0.3);
  CHECK(zero.sigma.norm() == 0.0);

  const double lr = 0.5, mu = 0.2, q = minibatch_coefficient(1000, 100);
  const Matrix k = p.hessian().matrix();
  FixedPointOptions opt;
  opt.tol = 1e-12;
  opt.preconditioner_of_sigma = [&](const SymMatrix& s) {
    return SymMatrix::symmetrize(lr * (k * s.matrix() * k).inverse());
  };
  opt.initial = SymMatrix(k.inverse());
  auto ngd = state_dependent_fixed_point(
      p, [&](const SymMatrix& s) { return SymMatrix::symmetrize(q * k * s.matrix() * k); }, lr, mu,
      opt);
  auto closed = ngd_covariance_minibatch(p, 1000, 100, lr, mu);
  CHECK(oracle::rel(ngd.sigma.matrix(), closed.sigma.matrix()) < 1e-8);
}

TEST_CASE("stability") {
  auto one = scalar_problem(1.0);
  auto v = stability_check(one, 1.9, 0.0);
  CHECK(v.stable);
  CHECK(v.margin == Approx(0.1));
  CHECK_FALSE(stability_check(one, 2.75, 0.3).stable);
  CHECK(stability_check(one, 2.75, 0.4).stable);
  CHECK_FALSE(stability_check(one, 2.0, 0.0).stable);
  CHECK(stability_check(one, 1e-12, 0.5).margin == Approx(3.0));
  CHECK(stability_check(diag_problem(), SymMatrix::diagonal({1.9, 19.0}), 0.0).stable);
  CHECK_FALSE(stability_check(diag_problem(), SymMatrix::diagonal({1.9, 21.0}), 0.0).stable);
}

TEST_CASE("1d regimes") {
  CHECK(classify_regime_1d(1.0, 0.5) == Regime::MonotoneConvergent);
  CHECK(classify_regime_1d(1.0, 1.5) == Regime::OscillatoryConvergent);
  CHECK(classify_regime_1d(1.0, 2.5) == Regime::Divergent);
  CHECK(classify_regime_1d(1.0, 1.0) == Regime::OscillatoryConvergent);
  CHECK(classify_regime_1d(1.0, 2.0) == Regime::Divergent);
}

TEST_CASE("effective inverse covariance") {
  auto cont = continuous_covariance(diag_problem(), SymMatrix::scalar(2, 0.5), 0.4);
  auto inv = effective_inverse_covariance(cont);
  CHECK(inv(0, 0) == Approx(2.0 / (0.5 * 0.4)));
  CHECK(inv(1, 1) == Approx(0.2 / (0.5 * 0.4)));
  auto disc = solve_sgd_covariance(scalar_problem(1.0), SymMatrix::identity(1), 1.0);
  CHECK(effective_inverse_covariance(disc)(0, 0) == Approx(1.0));
  StationaryPrediction id{SymMatrix::identity(2)};
  CHECK((effective_inverse_covariance(id).matrix() - Matrix::Identity(2, 2)).norm() < 1e-15);
  auto e = effective_inverse_expansion(diag_problem(), SymMatrix::scalar(2, 0.5), 0.3, 0.0);
  // Σ⁻¹ = 2K/(σ²λ) − K²/σ²: the discrete correction lowers the curvature.
  CHECK(e.correction(0, 0) == Approx(-1.0 / 0.5));
  CHECK(e.correction(1, 1) == Approx(-0.01 / 0.5));
}

TEST_CASE("structural properties") {
  std::mt19937_64 rng(27);
  SUBCASE("commuting noise gives a commuting solution") {
    Matrix k = oracle::random_spd(3, rng);
    Eigen::SelfAdjointEigenSolver<Matrix> es(k);
    Matrix c = es.eigenvectors() * Eigen::Vector3d(0.3, 1.7, 0.9).asDiagonal() *
               es.eigenvectors().transpose();
    double lr = 1.0 / es.eigenvalues().maxCoeff();
    auto s = solve_sgd_covariance(QuadraticProblem(SymMatrix(k)), SymMatrix::symmetrize(c), lr);
    CHECK(linalg::commutator_norm(s.sigma.matrix(), k) < 1e-9);
    Matrix cn = oracle::random_spd(3, rng);
    auto sn = solve_sgd_covariance(QuadraticProblem(SymMatrix(k)), SymMatrix(cn), lr);
    CHECK(linalg::commutator_norm(sn.sigma.matrix(), k) > 1e-3);
  }
  SUBCASE("continuum limit is first order") {
    Matrix k = oracle::random_spd(3, rng);
    Matrix c = oracle::random_spd(3, rng);
    QuadraticProblem pr{SymMatrix(k)};
    double kmax = oracle::power_iteration(k);
    for (double lr : {1e-2, 1e-3, 1e-4}) {
      auto d = solve_sgd_covariance(pr, SymMatrix(c), lr / kmax);
      auto ct = continuous_covariance(pr, SymMatrix(c), lr / kmax);
      CHECK(oracle::rel(d.sigma.matrix(), ct.sigma.matrix()) <= 2.0 * lr);
    }
  }
  SUBCASE("discrete dominates continuous") {
    auto p = diag_problem();
    auto c = SymMatrix::diagonal({1.0, 0.4});
    for (double lr = 0.05; lr < 2.0; lr += 0.05) {
      auto diff = solve_sgd_covariance(p, c, lr).sigma - continuous_covariance(p, c, lr).sigma;
      CHECK(linalg::min_eigenvalue(diff) >= 0.0);
    }
  }
  SUBCASE("1d variance increases to the boundary") {
    auto one = scalar_problem(1.0);
    double prev = 0.0;
    for (double lr = 0.1; lr < 2.0; lr += 0.1) {
      double v = solve_sgd_covariance(one, SymMatrix::identity(1), lr).sigma(0, 0);
      CHECK(v > prev);
      prev = v;
    }
    CHECK(solve_sgd_covariance(one, SymMatrix::identity(1), 2.0 - 1e-9).sigma(0, 0) > 1e8);
  }
}

TEST_CASE("predict dispatch") {
  auto p = diag_problem();
  auto s = predict(p, OptimizerSpec::sgd(1.8), NoiseSpec::isotropic(1.0));
  CHECK(s.sigma(0, 0) == Approx(9.0));
  auto mb = predict(p, OptimizerSpec{OptimizerKind::Ngd, 0.5, std::nullopt, 0.2, 0.0},
                    NoiseSpec::minibatch(1000, 100));
  CHECK(oracle::rel(mb.sigma.matrix(), ngd_covariance_minibatch(p, 1000, 100, 0.5, 0.2).sigma.matrix()) <
        1e-14);
  auto adam = predict(p, OptimizerSpec{OptimizerKind::Adam, 0.1, std::nullopt, 0.0, 0.0},
                      NoiseSpec::state_dependent(1.0));
  CHECK(adam.sigma(1, 1) == Approx(0.005));
}

}  // TEST_SUITE
