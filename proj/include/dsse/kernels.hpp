#pragma once
// Dense double-precision kernels used by the neural estimator.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant. The variant is picked once at startup from CPUID; the
// scalar path can be forced with DSSE_FORCE_SCALAR=1 or set_isa().

#include <cstddef>
#include <span>
#include <string_view>

namespace dsse::kernels {

enum class Isa { scalar, avx2 };

/// Kernel table. All matrices are row-major and densely packed.
struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y += W x,  W is rows x cols
  void (*gemv)(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y);
  // y += W^T x
  void (*gemv_t)(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y);
  // W += a b^T
  void (*ger)(const double* a, std::size_t rows, const double* b, std::size_t cols, double* w);
};

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif

bool cpu_supports(Isa isa);
Isa active_isa();
/// Switches the process-wide table. Throws if the CPU lacks the ISA.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

const KernelTable& active();

// Span conveniences over the active table.

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline void gemv(std::span<const double> w, std::size_t rows, std::size_t cols,
                 std::span<const double> x, std::span<double> y) {
  active().gemv(w.data(), rows, cols, x.data(), y.data());
}

inline void gemv_t(std::span<const double> w, std::size_t rows, std::size_t cols,
                   std::span<const double> x, std::span<double> y) {
  active().gemv_t(w.data(), rows, cols, x.data(), y.data());
}

inline void ger(std::span<const double> a, std::span<const double> b, std::span<double> w) {
  active().ger(a.data(), a.size(), b.data(), b.size(), w.data());
}

}  // namespace dsse::kernels
