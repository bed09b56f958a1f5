#include <cstdlib>
#include <cstring>

#include "sgdstat/kernels.hpp"

namespace sgdstat::kernels {

namespace {

constexpr KernelTable kScalar{Isa::Scalar, linear_step_scalar, quadratic_form_scalar,
                              squared_norm_scalar, double_well_step_scalar};
#if defined(SGDSTAT_HAVE_AVX2)
constexpr KernelTable kAvx2{Isa::Avx2, linear_step_avx2, quadratic_form_avx2, squared_norm_avx2,
                            double_well_step_avx2};
#endif

}  // namespace

const char* to_string(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
  if (isa == Isa::Scalar) return true;
#if defined(SGDSTAT_HAVE_AVX2)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa best_isa() {
  const char* env = std::getenv("SGDSTAT_ISA");
  if (env && std::strcmp(env, "scalar") == 0) return Isa::Scalar;
  return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

const KernelTable& kernels_for(Isa isa) {
#if defined(SGDSTAT_HAVE_AVX2)
  if (isa == Isa::Avx2 && isa_available(Isa::Avx2)) return kAvx2;
#else
  (void)isa;
#endif
  return kScalar;
}

const KernelTable& active_kernels() {
  static const KernelTable& table = kernels_for(best_isa());
  return table;
}

}  // namespace sgdstat::kernels
