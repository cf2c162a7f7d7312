#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "dsse/kernels.hpp"

namespace dsse::kernels {
namespace {

bool force_scalar_from_env() {
  const char* v = std::getenv("DSSE_FORCE_SCALAR");
  return v != nullptr && std::string(v) != "0" && std::string(v) != "";
}

Isa detect() {
  if (!force_scalar_from_env() && cpu_supports(Isa::avx2)) return Isa::avx2;
  return Isa::scalar;
}

const KernelTable& table_for(Isa isa) {
#if defined(__x86_64__) || defined(_M_X64)
  if (isa == Isa::avx2) return avx2_table();
#endif
  return scalar_table();
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!cpu_supports(isa)) {
    throw std::runtime_error("CPU does not support " + std::string(isa_name(isa)));
  }
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& active() { return table_for(active_isa()); }

}  // namespace dsse::kernels
