#pragma once

#include <cstddef>

// Lane kernels advance many independent chains at once. State is stored
// lane-major: component i of chain `lane` lives at x[i * stride + lane].
// Every variant performs the same floating-point operations in the same
// order per lane (no fused multiply-add), so results are bitwise identical.
namespace sgdstat::kernels {

inline constexpr std::size_t kBlockLanes = 64;

// g = Kw + η;  m ← μm + βg;  d = (1−ν)g + νm;  w ← w − P d
struct LinearStep {
  std::size_t dim = 0;
  const double* hessian = nullptr;  // row-major dim × dim
  const double* precond = nullptr;  // row-major dim × dim
  double momentum = 0.0;
  double gain = 1.0;
  double nu = 1.0;
};

struct Lanes {
  double* w = nullptr;
  double* m = nullptr;
  const double* noise = nullptr;
  double* g = nullptr;  // scratch, dim × stride
  double* d = nullptr;  // scratch, dim × stride
  std::size_t count = 0;
  std::size_t stride = 0;
};

using LinearStepFn = void (*)(const LinearStep&, const Lanes&);
// out[lane] = wᵀKw / 2
using QuadraticFormFn = void (*)(std::size_t dim, const double* k, const double* w,
                                 std::size_t count, std::size_t stride, double* out);
// out[lane] = ‖w‖²
using SquaredNormFn = void (*)(std::size_t dim, const double* w, std::size_t count,
                               std::size_t stride, double* out);
// w ← w − λ(4r·w(w² − 1) + η), the gradient of r(w² − 1)².
using DoubleWellStepFn = void (*)(double lr, double r, double* w, const double* noise,
                                  std::size_t count);

void linear_step_scalar(const LinearStep& s, const Lanes& l);
void quadratic_form_scalar(std::size_t dim, const double* k, const double* w, std::size_t count,
                           std::size_t stride, double* out);
void squared_norm_scalar(std::size_t dim, const double* w, std::size_t count, std::size_t stride,
                         double* out);
void double_well_step_scalar(double lr, double r, double* w, const double* noise,
                             std::size_t count);

#if defined(SGDSTAT_HAVE_AVX2)
void linear_step_avx2(const LinearStep& s, const Lanes& l);
void quadratic_form_avx2(std::size_t dim, const double* k, const double* w, std::size_t count,
                         std::size_t stride, double* out);
void squared_norm_avx2(std::size_t dim, const double* w, std::size_t count, std::size_t stride,
                       double* out);
void double_well_step_avx2(double lr, double r, double* w, const double* noise, std::size_t count);
#endif

enum class Isa { Scalar, Avx2 };

const char* to_string(Isa isa);
bool isa_available(Isa isa);
// Highest available ISA; SGDSTAT_ISA=scalar in the environment forces the reference path.
Isa best_isa();

struct KernelTable {
  Isa isa;
  LinearStepFn linear_step;
  QuadraticFormFn quadratic_form;
  SquaredNormFn squared_norm;
  DoubleWellStepFn double_well_step;
};

// Falls back to scalar when isa is unavailable.
const KernelTable& kernels_for(Isa isa);
const KernelTable& active_kernels();

}  // namespace sgdstat::kernels
