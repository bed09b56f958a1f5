#include "sgdstat/regression.hpp"

#include <numeric>

#include "sgdstat/errors.hpp"

namespace sgdstat::regression {

SymMatrix RegressionDataset::hessian() const {
  Matrix k = (1.0 / static_cast<double>(n())) * (inputs.transpose() * inputs);
  return SymMatrix::symmetrize(k);
}

Vector RegressionDataset::least_squares_optimum() const {
  Matrix gram = inputs.transpose() * inputs;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !linalg::is_positive_definite(SymMatrix::symmetrize(gram))) {
    throw NotPsdError("regression: empirical second-moment matrix is singular");
  }
  return ldlt.solve(inputs.transpose() * targets);
}

Vector RegressionDataset::full_gradient(const Vector& w) const {
  return (1.0 / static_cast<double>(n())) * (inputs.transpose() * (inputs * w - targets));
}

double RegressionDataset::residual_variance() const {
  Vector r = inputs * least_squares_optimum() - targets;
  return r.squaredNorm() / static_cast<double>(n());
}

RegressionDataset make_regression_dataset(Index n, Index dim, const SymMatrix& input_cov,
                                          const Vector& w_star, double label_noise_sd,
                                          std::uint64_t seed) {
  if (dim < 1 || input_cov.dim() != dim || w_star.size() != dim) {
    throw PreconditionError("regression: dimension mismatch");
  }
  if (n < 1) throw PreconditionError("regression: N must be >= 1");
  if (!(label_noise_sd >= 0.0)) throw PreconditionError("regression: label noise sd must be >= 0");
  const SymMatrix factor = linalg::spd_sqrt(input_cov);
  dynamics::Rng rng(dynamics::splitmix64(seed));
  std::normal_distribution<double> nd;
  RegressionDataset data;
  data.inputs.resize(n, dim);
  data.targets.resize(n);
  data.generating_w = w_star;
  data.label_noise_sd = label_noise_sd;
  Vector z(dim);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < dim; ++j) z(j) = nd(rng);
    data.inputs.row(i) = (factor.matrix() * z).transpose();
  }
  for (Index i = 0; i < n; ++i) {
    data.targets(i) = data.inputs.row(i).dot(w_star) + label_noise_sd * nd(rng);
  }
  if (!linalg::is_positive_definite(data.hessian())) {
    throw NotPsdError("regression: empirical Hessian is singular (N=" + std::to_string(n) +
                      ", D=" + std::to_string(dim) + ")");
  }
  return data;
}

namespace {

void gradient_into(const RegressionDataset& data, const Vector& w, Index batch,
                   std::vector<Index>& perm, dynamics::Rng& rng, Vector& out) {
  const Index n = data.n();
  out.setZero(data.dim());
  for (Index s = 0; s < batch; ++s) {
    std::uniform_int_distribution<Index> pick(s, n - 1);
    Index j = pick(rng);
    std::swap(perm[s], perm[j]);
    const Index i = perm[s];
    double r = data.inputs.row(i).dot(w) - data.targets(i);
    out += r * data.inputs.row(i).transpose();
  }
  out /= static_cast<double>(batch);
}

void check_batch(const RegressionDataset& data, Index batch) {
  if (batch < 1 || batch > data.n()) {
    throw PreconditionError("regression: batch must be in [1, N]");
  }
}

class MinibatchStream final : public dynamics::NoiseStream {
 public:
  MinibatchStream(const MinibatchNoise& src, const RegressionDataset& data, std::uint64_t seed)
      : src_(src), data_(data), rng_(seed), perm_(data.n()) {
    std::iota(perm_.begin(), perm_.end(), Index{0});
  }
  bool needs_state() const override { return true; }
  void draw(const double* w, double* eta) override {
    const Index d = data_.dim();
    Eigen::Map<const Vector> shifted(w, d);
    Vector abs = src_.optimum() + shifted;
    gradient_into(data_, abs, src_.batch(), perm_, rng_, g_);
    Vector e = g_ - src_.problem().hessian().matrix() * shifted;
    for (Index i = 0; i < d; ++i) eta[i] = e(i);
  }

 private:
  const MinibatchNoise& src_;
  const RegressionDataset& data_;
  dynamics::Rng rng_;
  std::vector<Index> perm_;
  Vector g_;
};

}  // namespace

Vector minibatch_gradient(const RegressionDataset& data, const Vector& w, Index batch,
                          dynamics::Rng& rng) {
  check_batch(data, batch);
  std::vector<Index> perm(data.n());
  std::iota(perm.begin(), perm.end(), Index{0});
  Vector g;
  gradient_into(data, w, batch, perm, rng, g);
  return g;
}

double noise_scale(const RegressionDataset& data, Index batch) {
  check_batch(data, batch);
  const double n = static_cast<double>(data.n());
  const double s = static_cast<double>(batch);
  if (data.n() == 1) return 0.0;
  return data.residual_variance() * (n - s) / ((n - 1.0) * s);
}

MinibatchNoise::MinibatchNoise(const RegressionDataset& data, Index batch)
    : data_(data),
      batch_(batch),
      optimum_(data.least_squares_optimum()),
      problem_(data.hessian()) {
  check_batch(data, batch);
}

std::unique_ptr<dynamics::NoiseStream> MinibatchNoise::stream(std::uint64_t seed) const {
  return std::make_unique<MinibatchStream>(*this, data_, seed);
}

}  // namespace sgdstat::regression
