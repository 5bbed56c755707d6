#include <atomic>
#include <cstdlib>
#include <string>

#include "nfembed/simd/kernels.hpp"

namespace nfembed::simd {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* env = std::getenv("NFEMBED_SIMD");
  const std::string wanted = env ? env : "auto";
  if (wanted == "scalar") return &detail::scalar_table();
  if (level_supported(Level::avx2)) return detail::avx2_table();
  return &detail::scalar_table();
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

bool level_supported(Level level) {
  switch (level) {
    case Level::scalar:
      return true;
    case Level::avx2:
      return detail::avx2_table() != nullptr && cpu_has_avx2();
  }
  return false;
}

const KernelTable& kernels() { return *active().load(std::memory_order_relaxed); }

const KernelTable& kernels_for(Level level) {
  if (level == Level::avx2 && level_supported(Level::avx2)) return *detail::avx2_table();
  return detail::scalar_table();
}

Level active_level() { return kernels().level; }

void set_level(Level level) { active().store(&kernels_for(level), std::memory_order_relaxed); }

std::string_view level_name(Level level) {
  switch (level) {
    case Level::scalar:
      return "scalar";
    case Level::avx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace nfembed::simd
