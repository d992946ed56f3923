#include "rtp/kernels.hpp"

namespace rtp::kern {
namespace {

void matmul_scalar(const double* a, size_t lda, const double* b, size_t ldb, double* c,
                   size_t ldc, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (size_t t = 0; t < k; ++t) {
      const double av = a[i * lda + t];
      const double* brow = b + t * ldb;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_acc_scalar(const double* a, size_t lda, const double* b, size_t ldb, double* c,
                       size_t ldc, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (size_t t = 0; t < k; ++t) {
      const double av = a[i * lda + t];
      const double* brow = b + t * ldb;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_tn_acc_scalar(const double* a, size_t lda, const double* b, size_t ldb, double* c,
                          size_t ldc, size_t m, size_t k, size_t n) {
  for (size_t t = 0; t < k; ++t) {
    const double* arow = a + t * lda;
    const double* brow = b + t * ldb;
    for (size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * ldc;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt_acc_scalar(const double* a, size_t lda, const double* b, size_t ldb, double* c,
                          size_t ldc, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = b + j * ldb;
      double acc = crow[j];
      for (size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      crow[j] = acc;
    }
  }
}

void add_scalar(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_scalar(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_scalar(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_scalar(const double* x, double s, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * s;
}

void axpy_scalar(double a, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void transpose_scalar(const double* in, double* out, size_t rows, size_t cols) {
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels table{
      "scalar",        matmul_scalar, matmul_acc_scalar, matmul_tn_acc_scalar,
      matmul_nt_acc_scalar, add_scalar, sub_scalar,      mul_scalar,
      scale_scalar,    axpy_scalar,   transpose_scalar,
  };
  return table;
}

}  // namespace rtp::kern
