#include <atomic>
#include <cstdlib>
#include <string_view>

#include "hfmf/simd/kernels.hpp"

namespace hfmf::simd {

const KernelTable* avx2_kernels_compiled();

namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(__i386__)) && \
    (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* resolve() {
  const KernelTable* avx2 = avx2_kernels();
  if (const char* env = std::getenv("HFMF_SIMD")) {
    const std::string_view want(env);
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2" && avx2 != nullptr) return avx2;
  }
  return avx2 != nullptr ? avx2 : &scalar_kernels();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{resolve()};
  return slot;
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable* table =
      cpu_has_avx2() ? avx2_kernels_compiled() : nullptr;
  return table;
}

const KernelTable& active_kernels() {
  return *active_slot().load(std::memory_order_acquire);
}

void set_active_kernels(const KernelTable& table) {
  active_slot().store(&table, std::memory_order_release);
}

}  // namespace hfmf::simd
