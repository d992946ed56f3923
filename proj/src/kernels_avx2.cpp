// AVX2 kernel variants. Compiled with -mavx2 for this translation unit only;
// callers go through the dispatch table after a runtime CPU check.
//
// Lanes map to independent output elements and accumulation stays in
// ascending contraction order, so results are bit-identical to the scalar
// reference. No FMA: the scalar path does separate mul and add, and the
// rounding must match.

#include "rtp/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define RTP_HAVE_AVX2_BUILD 1
#include <immintrin.h>
#else
#define RTP_HAVE_AVX2_BUILD 0
#endif

namespace rtp::kern {

#if RTP_HAVE_AVX2_BUILD

namespace {

// Row kernel shared by the nn/tn forms: crow[j] += av * brow[j].
inline void axpy_row(double av, const double* brow, double* crow, size_t n) {
  const __m256d avec = _mm256_set1_pd(av);
  size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d cv = _mm256_loadu_pd(crow + j);
    __m256d bv = _mm256_loadu_pd(brow + j);
    cv = _mm256_add_pd(cv, _mm256_mul_pd(avec, bv));
    _mm256_storeu_pd(crow + j, cv);
  }
  for (; j < n; ++j) crow[j] += av * brow[j];
}

void matmul_avx2(const double* a, size_t lda, const double* b, size_t ldb, double* c, size_t ldc,
                 size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (size_t t = 0; t < k; ++t) axpy_row(a[i * lda + t], b + t * ldb, crow, n);
  }
}

void matmul_acc_avx2(const double* a, size_t lda, const double* b, size_t ldb, double* c,
                     size_t ldc, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (size_t t = 0; t < k; ++t) axpy_row(a[i * lda + t], b + t * ldb, crow, n);
  }
}

void matmul_tn_acc_avx2(const double* a, size_t lda, const double* b, size_t ldb, double* c,
                        size_t ldc, size_t m, size_t k, size_t n) {
  for (size_t t = 0; t < k; ++t) {
    const double* arow = a + t * lda;
    const double* brow = b + t * ldb;
    for (size_t i = 0; i < m; ++i) axpy_row(arow[i], brow, c + i * ldc, n);
  }
}

void add_avx2(const double* x, const double* y, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_avx2(const double* x, const double* y, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_avx2(const double* x, const double* y, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_avx2(const double* x, double s, double* out, size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), sv));
  for (; i < n; ++i) out[i] = x[i] * s;
}

void axpy_avx2(double a, const double* x, double* y, size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yv = _mm256_loadu_pd(y + i);
    yv = _mm256_add_pd(yv, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, yv);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

// 4x4 blocked transpose; pure data movement.
void transpose_avx2(const double* in, double* out, size_t rows, size_t cols) {
  const size_t r4 = rows - rows % 4;
  const size_t c4 = cols - cols % 4;
  for (size_t i = 0; i < r4; i += 4) {
    for (size_t j = 0; j < c4; j += 4) {
      __m256d r0 = _mm256_loadu_pd(in + (i + 0) * cols + j);
      __m256d r1 = _mm256_loadu_pd(in + (i + 1) * cols + j);
      __m256d r2 = _mm256_loadu_pd(in + (i + 2) * cols + j);
      __m256d r3 = _mm256_loadu_pd(in + (i + 3) * cols + j);
      __m256d t0 = _mm256_unpacklo_pd(r0, r1);
      __m256d t1 = _mm256_unpackhi_pd(r0, r1);
      __m256d t2 = _mm256_unpacklo_pd(r2, r3);
      __m256d t3 = _mm256_unpackhi_pd(r2, r3);
      _mm256_storeu_pd(out + (j + 0) * rows + i, _mm256_permute2f128_pd(t0, t2, 0x20));
      _mm256_storeu_pd(out + (j + 1) * rows + i, _mm256_permute2f128_pd(t1, t3, 0x20));
      _mm256_storeu_pd(out + (j + 2) * rows + i, _mm256_permute2f128_pd(t0, t2, 0x31));
      _mm256_storeu_pd(out + (j + 3) * rows + i, _mm256_permute2f128_pd(t1, t3, 0x31));
    }
    for (size_t j = c4; j < cols; ++j)
      for (size_t ii = i; ii < i + 4; ++ii) out[j * rows + ii] = in[ii * cols + j];
  }
  for (size_t i = r4; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
}

}  // namespace

const Kernels* avx2_kernels() {
  if (!__builtin_cpu_supports("avx2")) return nullptr;
  static const Kernels table{
      "avx2",
      matmul_avx2,
      matmul_acc_avx2,
      matmul_tn_acc_avx2,
      scalar_kernels().matmul_nt_acc,
      add_avx2,
      sub_avx2,
      mul_avx2,
      scale_avx2,
      axpy_avx2,
      transpose_avx2,
  };
  return &table;
}

#else

const Kernels* avx2_kernels() { return nullptr; }

#endif

}  // namespace rtp::kern
