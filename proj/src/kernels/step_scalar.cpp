#include "sgdstat/kernels.hpp"

namespace sgdstat::kernels {

void linear_step_scalar(const LinearStep& s, const Lanes& l) {
  const std::size_t n = s.dim;
  const std::size_t st = l.stride;
  const double c1 = 1.0 - s.nu;
  for (std::size_t lane = 0; lane < l.count; ++lane) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc = acc + s.hessian[i * n + j] * l.w[j * st + lane];
      double g = acc + l.noise[i * st + lane];
      double m = s.momentum * l.m[i * st + lane] + s.gain * g;
      l.m[i * st + lane] = m;
      l.g[i * st + lane] = g;
      l.d[i * st + lane] = c1 * g + s.nu * m;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc = acc + s.precond[i * n + j] * l.d[j * st + lane];
      l.w[i * st + lane] = l.w[i * st + lane] - acc;
    }
  }
}

void quadratic_form_scalar(std::size_t dim, const double* k, const double* w, std::size_t count,
                           std::size_t stride, double* out) {
  for (std::size_t lane = 0; lane < count; ++lane) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double t = 0.0;
      for (std::size_t j = 0; j < dim; ++j) t = t + k[i * dim + j] * w[j * stride + lane];
      acc = acc + w[i * stride + lane] * t;
    }
    out[lane] = 0.5 * acc;
  }
}

void squared_norm_scalar(std::size_t dim, const double* w, std::size_t count, std::size_t stride,
                         double* out) {
  for (std::size_t lane = 0; lane < count; ++lane) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double x = w[i * stride + lane];
      acc = acc + x * x;
    }
    out[lane] = acc;
  }
}

void double_well_step_scalar(double lr, double r, double* w, const double* noise,
                             std::size_t count) {
  const double c = 4.0 * r;
  for (std::size_t lane = 0; lane < count; ++lane) {
    double x = w[lane];
    double u = x * x - 1.0;
    double g = c * (x * u) + noise[lane];
    w[lane] = x - lr * g;
  }
}

}  // namespace sgdstat::kernels
