#pragma once

#include <cstdint>

#include "sgdstat/dynamics.hpp"

namespace sgdstat::regression {

// Loss L(w) = (1/2N) Σ (wᵀxᵢ − yᵢ)², Hessian K̂ = (1/N) Σ xᵢxᵢᵀ, so K̂ estimates
// the input covariance.
struct RegressionDataset {
  Matrix inputs;   // N × D
  Vector targets;  // N
  Vector generating_w;
  double label_noise_sd = 0.0;

  Index n() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }
  SymMatrix hessian() const;
  // Minimizer of the full loss.
  Vector least_squares_optimum() const;
  Vector full_gradient(const Vector& w) const;
  // Mean squared residual at the least-squares optimum.
  double residual_variance() const;
};

// xᵢ ~ N(0, input_cov), yᵢ = w*ᵀxᵢ + ε, ε ~ N(0, sd²).
RegressionDataset make_regression_dataset(Index n, Index dim, const SymMatrix& input_cov,
                                          const Vector& w_star, double label_noise_sd,
                                          std::uint64_t seed);

// (1/S) Σ_{i∈B} xᵢ(xᵢᵀw − yᵢ) over S distinct indices (partial Fisher–Yates).
Vector minibatch_gradient(const RegressionDataset& data, const Vector& w, Index batch,
                          dynamics::Rng& rng);

// C ≈ scale·K̂ with scale = σ̂²(N − S)/((N − 1)S), σ̂² the residual variance.
double noise_scale(const RegressionDataset& data, Index batch);

// Real minibatch noise η = g_B(ŵ + w) − K̂w, w in coordinates shifted to ŵ.
class MinibatchNoise final : public dynamics::NoiseSource {
 public:
  MinibatchNoise(const RegressionDataset& data, Index batch);

  Index dim() const override { return data_.dim(); }
  std::unique_ptr<dynamics::NoiseStream> stream(std::uint64_t seed) const override;

  const QuadraticProblem& problem() const { return problem_; }
  const Vector& optimum() const { return optimum_; }
  Index batch() const { return batch_; }

 private:
  const RegressionDataset& data_;
  Index batch_;
  Vector optimum_;
  QuadraticProblem problem_;
};

}  // namespace sgdstat::regression
