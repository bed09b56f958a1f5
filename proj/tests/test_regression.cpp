#include "doctest.h"
#include "oracles.hpp"
#include "sgdstat/errors.hpp"
#include "sgdstat/regression.hpp"

using namespace sgdstat;
using namespace sgdstat::regression;
using doctest::Approx;

TEST_SUITE("regression") {

TEST_CASE("empirical Hessian tracks the input covariance") {
  auto d1 = make_regression_dataset(1000, 1, SymMatrix::identity(1), Vector::Ones(1), 1.0, 1);
  CHECK(d1.hessian()(0, 0) == Approx(1.0).epsilon(0.10));
  auto d2 = make_regression_dataset(1000, 2, SymMatrix::diagonal({1.0, 0.1}), Vector::Ones(2), 1.0, 2);
  CHECK(d2.hessian()(0, 0) == Approx(1.0).epsilon(0.15));
  CHECK(d2.hessian()(1, 1) == Approx(0.1).epsilon(0.15));
  // deterministic given the seed
  auto again = make_regression_dataset(1000, 2, SymMatrix::diagonal({1.0, 0.1}), Vector::Ones(2), 1.0, 2);
  CHECK((again.inputs - d2.inputs).norm() == 0.0);
  CHECK_THROWS_AS(make_regression_dataset(1, 2, SymMatrix::identity(2), Vector::Ones(2), 0.0, 3),
                  NotPsdError);
}

TEST_CASE("minibatch gradients") {
  Vector w_star(2);
  w_star << 0.7, -1.2;
  auto clean = make_regression_dataset(200, 2, SymMatrix::identity(2), w_star, 0.0, 4);
  dynamics::Rng rng(5);
  for (Index s : {1, 10, 200}) CHECK(minibatch_gradient(clean, w_star, s, rng).norm() < 1e-12);

  auto noisy = make_regression_dataset(200, 2, SymMatrix::identity(2), w_star, 1.0, 6);
  Vector w = Vector::Constant(2, 0.3);
  CHECK((minibatch_gradient(noisy, w, 200, rng) - noisy.full_gradient(w)).norm() < 1e-12);

  // E over batches equals the full gradient; covariance at ŵ is scale·K̂.
  const Index batch = 20;
  Vector opt = noisy.least_squares_optimum();
  CHECK(noisy.full_gradient(opt).norm() < 1e-12);
  const int draws = 100000;
  Vector mean = Vector::Zero(2);
  Matrix cov = Matrix::Zero(2, 2);
  for (int i = 0; i < draws; ++i) {
    Vector g = minibatch_gradient(noisy, opt, batch, rng);
    mean += g;
    cov += g * g.transpose();
  }
  mean /= draws;
  cov /= draws;
  CHECK(mean.norm() < 0.01);
  // exact covariance of a without-replacement batch mean
  Matrix pop = Matrix::Zero(2, 2);
  for (Index i = 0; i < noisy.n(); ++i) {
    double r = noisy.inputs.row(i).dot(opt) - noisy.targets(i);
    pop += r * r * noisy.inputs.row(i).transpose() * noisy.inputs.row(i);
  }
  const double n = static_cast<double>(noisy.n());
  pop *= (n - batch) / ((n - 1.0) * batch) / n;
  CHECK(oracle::rel(cov, pop) < 0.03);

  // σ̂²K̂ approximates it once N is large
  auto big = make_regression_dataset(20000, 2, SymMatrix::identity(2), w_star, 1.0, 7);
  Vector big_opt = big.least_squares_optimum();
  Matrix big_pop = Matrix::Zero(2, 2);
  for (Index i = 0; i < big.n(); ++i) {
    double r = big.inputs.row(i).dot(big_opt) - big.targets(i);
    big_pop += r * r * big.inputs.row(i).transpose() * big.inputs.row(i);
  }
  big_pop *= (20000.0 - batch) / (19999.0 * batch) / 20000.0;
  CHECK(oracle::rel(big_pop, noise_scale(big, batch) * big.hessian().matrix()) < 0.05);
}

TEST_CASE("noise scale") {
  auto d = make_regression_dataset(1000, 1, SymMatrix::identity(1), Vector::Ones(1), 1.0, 8);
  const double s2 = d.residual_variance();
  CHECK(s2 == Approx(1.0).epsilon(0.1));
  CHECK(noise_scale(d, 100) == Approx(s2 * 900.0 / (999.0 * 100.0)));
  CHECK(noise_scale(d, 1000) == 0.0);
}

TEST_CASE("minibatch noise source is reproducible") {
  auto d = make_regression_dataset(500, 2, SymMatrix::diagonal({1.0, 0.1}), Vector::Ones(2), 1.0, 9);
  MinibatchNoise noise(d, 50);
  auto a = noise.stream(3);
  auto b = noise.stream(3);
  Vector w = Vector::Constant(2, 0.1), ea(2), eb(2);
  for (int i = 0; i < 10; ++i) {
    a->draw(w.data(), ea.data());
    b->draw(w.data(), eb.data());
    CHECK((ea - eb).norm() == 0.0);
  }
  CHECK(a->needs_state());
}

}  // TEST_SUITE
