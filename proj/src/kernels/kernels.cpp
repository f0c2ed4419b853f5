#include "dsvla/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace dsvla::kernels {

#if defined(DSVLA_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(DSVLA_HAVE_NEON)
const KernelTable& neon_table();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(DSVLA_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* resolve(std::string_view name) {
  if (name == "scalar") return &scalar_table();
#if defined(DSVLA_HAVE_AVX2)
  if (name == "avx2") {
    if (!cpu_has_avx2()) throw std::runtime_error("kernels: CPU lacks AVX2");
    return &avx2_table();
  }
#endif
#if defined(DSVLA_HAVE_NEON)
  if (name == "neon") return &neon_table();
#endif
  if (name == "auto") {
#if defined(DSVLA_HAVE_NEON)
    return &neon_table();
#endif
#if defined(DSVLA_HAVE_AVX2)
    if (cpu_has_avx2()) return &avx2_table();
#endif
    return &scalar_table();
  }
  throw std::runtime_error("kernels: unknown or unavailable variant '" +
                           std::string(name) + "'");
}

const KernelTable*& active_slot() {
  static const KernelTable* slot = [] {
    const char* env = std::getenv("DSVLA_KERNELS");
    return resolve(env != nullptr ? std::string_view(env) : "auto");
  }();
  return slot;
}

}  // namespace

const KernelTable& active() { return *active_slot(); }

void select(std::string_view name) { active_slot() = resolve(name); }

std::vector<std::string> available() {
  std::vector<std::string> out{"scalar"};
#if defined(DSVLA_HAVE_AVX2)
  if (cpu_has_avx2()) out.emplace_back("avx2");
#endif
#if defined(DSVLA_HAVE_NEON)
  out.emplace_back("neon");
#endif
  return out;
}

}  // namespace dsvla::kernels
