#pragma once

// Dense double-precision inner loops used by the network, the losses and the
// clustering metrics. Every kernel has a portable scalar reference and, on
// x86-64, an AVX2/FMA variant. The active table is chosen once at startup from
// CPUID; setting IMPASH_KERNELS=scalar forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace impash::kernels {

struct KernelTable {
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sq_dist)(const double* a, const double* b, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // m = alpha * m + (1 - alpha) * q
  void (*blend)(double alpha, double* m, const double* q, std::size_t n);
  // Row-major C[M x N] (+)= A[M x K] * B[K x N].
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c,
               std::size_t ldc, bool accumulate);
};

const KernelTable& scalar_table();

// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

const KernelTable& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  return active().sq_dist(a.data(), b.data(), a.size());
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}

inline void blend(double alpha, std::span<double> m, std::span<const double> q) {
  active().blend(alpha, m.data(), q.data(), m.size());
}

inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 std::size_t lda, const double* b, std::size_t ldb, double* c,
                 std::size_t ldc, bool accumulate) {
  active().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace impash::kernels
