#pragma once

#include <cstddef>

// Double-precision array kernels behind the tensor operations. Two
// implementations share one table layout: a scalar reference and an AVX2
// variant selected at runtime. Both produce bit-identical results: SIMD
// lanes only ever cover independent output elements, so the per-element
// operation order (ascending contraction index) never changes. The
// equivalence tests assert exact equality.
//
// GEMM kernels take BLAS-style leading dimensions so callers can read and
// write sub-blocks of larger row-major matrices without staging copies.

namespace rtp::kern {

struct Kernels {
  const char* name;

  // c = a·b, a is m x k (lda), b is k x n (ldb), c is m x n (ldc).
  // c[i,j] accumulates over k in ascending order.
  void (*matmul)(const double* a, size_t lda, const double* b, size_t ldb, double* c, size_t ldc,
                 size_t m, size_t k, size_t n);

  // c += a·b.
  void (*matmul_acc)(const double* a, size_t lda, const double* b, size_t ldb, double* c,
                     size_t ldc, size_t m, size_t k, size_t n);

  // c += aᵀ·b, a is k x m (lda), b is k x n (ldb), c is m x n (ldc).
  void (*matmul_tn_acc)(const double* a, size_t lda, const double* b, size_t ldb, double* c,
                        size_t ldc, size_t m, size_t k, size_t n);

  // c += a·bᵀ, a is m x k (lda), b is n x k (ldb), c is m x n (ldc). Kept
  // scalar in both tables: the dot-product form would need either gathers or
  // a lane-order change to vectorize.
  void (*matmul_nt_acc)(const double* a, size_t lda, const double* b, size_t ldb, double* c,
                        size_t ldc, size_t m, size_t k, size_t n);

  void (*add)(const double* x, const double* y, double* out, size_t n);
  void (*sub)(const double* x, const double* y, double* out, size_t n);
  void (*mul)(const double* x, const double* y, double* out, size_t n);
  void (*scale)(const double* x, double s, double* out, size_t n);
  // y += a·x
  void (*axpy)(double a, const double* x, double* y, size_t n);
  // out = inᵀ, in is rows x cols, both contiguous.
  void (*transpose)(const double* in, double* out, size_t rows, size_t cols);
};

// Scalar reference table. Always available.
const Kernels& scalar_kernels();

// AVX2 table, or nullptr when the CPU lacks AVX2 (or the build does).
const Kernels* avx2_kernels();

// Runtime-selected table: AVX2 when supported, else scalar. The environment
// variable RTP_KERNELS (values: "scalar", "avx2") overrides the choice; an
// unsatisfiable override falls back to scalar.
const Kernels& active();

// Test hook: force a table until reset with nullptr.
void force_kernels(const Kernels* k);

}  // namespace rtp::kern
