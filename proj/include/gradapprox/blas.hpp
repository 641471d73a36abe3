#pragma once

#include <cblas.h>

#include <cstdlib>

#if defined(__linux__)
#include <unistd.h>
#endif

namespace gradapprox::detail {

// OpenBLAS picks its kernel from the CPUID model string, which virtualized
// CPUs often mask ("Intel(R) Xeon(R) Processor"), landing on slow generic
// kernels. The selection happens in the shared library's constructor, before
// main() runs, so a plain setenv() here is too late. When the user has not
// chosen a core type and AVX-512 is present, set OPENBLAS_CORETYPE and
// re-exec the process once so the BLAS init sees it. Call this first thing
// in main(); it is a no-op on the second pass (the variable is then set).
inline void blas_init(char **argv = nullptr) {
#if defined(__x86_64__) && defined(__linux__)
  if (!std::getenv("OPENBLAS_CORETYPE") && __builtin_cpu_supports("avx512f")) {
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
    if (argv) execv("/proc/self/exe", argv);  // on failure, keep running
  }
#else
  (void)argv;
#endif
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                 float alpha, const float *a, int lda, const float *b, int ldb,
                 float beta, float *c, int ldc) {
  blas_init();
  cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                 double alpha, const double *a, int lda, const double *b, int ldb,
                 double beta, double *c, int ldc) {
  blas_init();
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace gradapprox::detail

namespace gradapprox {
using detail::blas_init;
}  // namespace gradapprox
