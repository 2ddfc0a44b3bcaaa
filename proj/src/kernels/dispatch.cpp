#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "duet/kernels.hpp"

namespace duet::kernels {

#if defined(DUET_HAVE_AVX2)
const KernelTable* avx2_table_impl();
#endif

const KernelTable* avx2() {
#if defined(DUET_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* resolve(std::string_view name) {
  if (name == "scalar") return &scalar();
  if (name == "avx2") {
    const KernelTable* t = avx2();
    if (t == nullptr) throw std::invalid_argument("kernel variant 'avx2' is not available on this CPU");
    return t;
  }
  if (name == "auto" || name.empty()) {
    const KernelTable* t = avx2();
    return t != nullptr ? t : &scalar();
  }
  throw std::invalid_argument("unknown kernel variant '" + std::string(name) + "'");
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{[] {
    const char* env = std::getenv("DUET_KERNELS");
    return resolve(env != nullptr ? std::string_view(env) : std::string_view("auto"));
  }()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(std::string_view name) { current().store(resolve(name), std::memory_order_release); }

}  // namespace duet::kernels
