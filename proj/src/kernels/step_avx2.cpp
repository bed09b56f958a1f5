#include <immintrin.h>

#include "sgdstat/kernels.hpp"

namespace sgdstat::kernels {

namespace {

constexpr std::size_t kWidth = 4;

Lanes tail(const Lanes& l, std::size_t start) {
  Lanes t = l;
  t.w += start;
  t.m += start;
  t.noise += start;
  t.g += start;
  t.d += start;
  t.count = l.count - start;
  return t;
}

}  // namespace

void linear_step_avx2(const LinearStep& s, const Lanes& l) {
  const std::size_t n = s.dim;
  const std::size_t st = l.stride;
  const __m256d mu = _mm256_set1_pd(s.momentum);
  const __m256d beta = _mm256_set1_pd(s.gain);
  const __m256d nu = _mm256_set1_pd(s.nu);
  const __m256d c1 = _mm256_set1_pd(1.0 - s.nu);
  const std::size_t full = l.count - l.count % kWidth;
  for (std::size_t p = 0; p < full; p += kWidth) {
    for (std::size_t i = 0; i < n; ++i) {
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t j = 0; j < n; ++j) {
        __m256d kij = _mm256_set1_pd(s.hessian[i * n + j]);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(kij, _mm256_loadu_pd(l.w + j * st + p)));
      }
      __m256d g = _mm256_add_pd(acc, _mm256_loadu_pd(l.noise + i * st + p));
      __m256d m = _mm256_add_pd(_mm256_mul_pd(mu, _mm256_loadu_pd(l.m + i * st + p)),
                                _mm256_mul_pd(beta, g));
      _mm256_storeu_pd(l.m + i * st + p, m);
      _mm256_storeu_pd(l.g + i * st + p, g);
      _mm256_storeu_pd(l.d + i * st + p, _mm256_add_pd(_mm256_mul_pd(c1, g), _mm256_mul_pd(nu, m)));
    }
    for (std::size_t i = 0; i < n; ++i) {
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t j = 0; j < n; ++j) {
        __m256d pij = _mm256_set1_pd(s.precond[i * n + j]);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(pij, _mm256_loadu_pd(l.d + j * st + p)));
      }
      double* w = l.w + i * st + p;
      _mm256_storeu_pd(w, _mm256_sub_pd(_mm256_loadu_pd(w), acc));
    }
  }
  if (full < l.count) linear_step_scalar(s, tail(l, full));
}

void quadratic_form_avx2(std::size_t dim, const double* k, const double* w, std::size_t count,
                         std::size_t stride, double* out) {
  const std::size_t full = count - count % kWidth;
  const __m256d half = _mm256_set1_pd(0.5);
  for (std::size_t p = 0; p < full; p += kWidth) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t i = 0; i < dim; ++i) {
      __m256d t = _mm256_setzero_pd();
      for (std::size_t j = 0; j < dim; ++j) {
        t = _mm256_add_pd(t, _mm256_mul_pd(_mm256_set1_pd(k[i * dim + j]),
                                           _mm256_loadu_pd(w + j * stride + p)));
      }
      acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(w + i * stride + p), t));
    }
    _mm256_storeu_pd(out + p, _mm256_mul_pd(half, acc));
  }
  if (full < count) quadratic_form_scalar(dim, k, w + full, count - full, stride, out + full);
}

void squared_norm_avx2(std::size_t dim, const double* w, std::size_t count, std::size_t stride,
                       double* out) {
  const std::size_t full = count - count % kWidth;
  for (std::size_t p = 0; p < full; p += kWidth) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t i = 0; i < dim; ++i) {
      __m256d x = _mm256_loadu_pd(w + i * stride + p);
      acc = _mm256_add_pd(acc, _mm256_mul_pd(x, x));
    }
    _mm256_storeu_pd(out + p, acc);
  }
  if (full < count) squared_norm_scalar(dim, w + full, count - full, stride, out + full);
}

void double_well_step_avx2(double lr, double r, double* w, const double* noise, std::size_t count) {
  const std::size_t full = count - count % kWidth;
  const __m256d c = _mm256_set1_pd(4.0 * r);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d rate = _mm256_set1_pd(lr);
  for (std::size_t p = 0; p < full; p += kWidth) {
    __m256d x = _mm256_loadu_pd(w + p);
    __m256d u = _mm256_sub_pd(_mm256_mul_pd(x, x), one);
    __m256d g = _mm256_add_pd(_mm256_mul_pd(c, _mm256_mul_pd(x, u)), _mm256_loadu_pd(noise + p));
    _mm256_storeu_pd(w + p, _mm256_sub_pd(x, _mm256_mul_pd(rate, g)));
  }
  if (full < count) double_well_step_scalar(lr, r, w + full, noise + full, count - full);
}

}  // namespace sgdstat::kernels
