#include <doctest.h>

#include <cstring>
#include <string>
#include <vector>

#include "rtp/kernels.hpp"
#include "rtp/rng.hpp"

using namespace rtp;

namespace {

std::vector<double> random_vec(SplitMix64& rng, size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.next_uniform(-1.0, 1.0);
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul matches the naive triple loop exactly") {
  SplitMix64 rng(7);
  const size_t m = 7, k = 5, n = 3;
  auto a = random_vec(rng, m * k);
  auto b = random_vec(rng, k * n);

  std::vector<double> expected(m * n, 0.0);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j)
      for (size_t t = 0; t < k; ++t) expected[i * n + j] += a[i * k + t] * b[t * n + j];

  std::vector<double> got(m * n, -1.0);
  kern::active().matmul(a.data(), k, b.data(), n, got.data(), n, m, k, n);
  CHECK(bit_equal(got, expected));

  std::vector<double> got_scalar(m * n, -1.0);
  kern::scalar_kernels().matmul(a.data(), k, b.data(), n, got_scalar.data(), n, m, k, n);
  CHECK(bit_equal(got_scalar, expected));
}

TEST_CASE("block results with strides match contiguous results exactly") {
  // Writing a column block of a wider matrix must produce the same bits as
  // the standalone product.
  SplitMix64 rng(21);
  const size_t m = 6, k = 8, n = 4, ldc = 13;
  auto a = random_vec(rng, m * k);
  auto b = random_vec(rng, k * n);
  std::vector<double> tight(m * n, 0.0), wide(m * ldc, 0.0);
  kern::active().matmul(a.data(), k, b.data(), n, tight.data(), n, m, k, n);
  kern::active().matmul(a.data(), k, b.data(), n, wide.data() + 5, ldc, m, k, n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) CHECK(wide[i * ldc + 5 + j] == tight[i * n + j]);
}

TEST_CASE("avx2 variants are bit-identical to the scalar reference") {
  const kern::Kernels* avx2 = kern::avx2_kernels();
  if (!avx2) return;  // host without AVX2: dispatch already falls back
  const kern::Kernels& ref = kern::scalar_kernels();
  SplitMix64 rng(99);

  for (int iter = 0; iter < 60; ++iter) {
    const size_t m = 1 + rng.next_index(9);
    const size_t k = 1 + rng.next_index(9);
    const size_t n = 1 + rng.next_index(17);
    const size_t ldc = n + rng.next_index(5);  // wider destination rows
    auto a = random_vec(rng, m * k);
    auto at = random_vec(rng, k * m);
    auto b = random_vec(rng, k * n);
    auto bt = random_vec(rng, n * k);
    auto c0 = random_vec(rng, m * ldc);

    auto run = [&](const kern::Kernels& tab) {
      auto c = c0;
      tab.matmul(a.data(), k, b.data(), n, c.data(), ldc, m, k, n);
      tab.matmul_acc(a.data(), k, b.data(), n, c.data(), ldc, m, k, n);
      tab.matmul_tn_acc(at.data(), m, b.data(), n, c.data(), ldc, m, k, n);
      tab.matmul_nt_acc(a.data(), k, bt.data(), k, c.data(), ldc, m, k, n);
      return c;
    };
    CHECK(bit_equal(run(ref), run(*avx2)));

    const size_t len = 1 + rng.next_index(70);
    auto x = random_vec(rng, len);
    auto y = random_vec(rng, len);
    std::vector<double> o1(len), o2(len);

    ref.add(x.data(), y.data(), o1.data(), len);
    avx2->add(x.data(), y.data(), o2.data(), len);
    CHECK(bit_equal(o1, o2));
    ref.sub(x.data(), y.data(), o1.data(), len);
    avx2->sub(x.data(), y.data(), o2.data(), len);
    CHECK(bit_equal(o1, o2));
    ref.mul(x.data(), y.data(), o1.data(), len);
    avx2->mul(x.data(), y.data(), o2.data(), len);
    CHECK(bit_equal(o1, o2));
    ref.scale(x.data(), 1.7, o1.data(), len);
    avx2->scale(x.data(), 1.7, o2.data(), len);
    CHECK(bit_equal(o1, o2));
    o1 = y;
    o2 = y;
    ref.axpy(-0.3, x.data(), o1.data(), len);
    avx2->axpy(-0.3, x.data(), o2.data(), len);
    CHECK(bit_equal(o1, o2));

    const size_t rows = 1 + rng.next_index(9), cols = 1 + rng.next_index(9);
    auto in = random_vec(rng, rows * cols);
    std::vector<double> t1(rows * cols), t2(rows * cols);
    ref.transpose(in.data(), t1.data(), rows, cols);
    avx2->transpose(in.data(), t2.data(), rows, cols);
    CHECK(bit_equal(t1, t2));
  }
}

TEST_CASE("dispatch prefers avx2 when the cpu supports it and honors forcing") {
  if (kern::avx2_kernels()) {
    CHECK(std::string(kern::active().name) == "avx2");
    kern::force_kernels(&kern::scalar_kernels());
    CHECK(std::string(kern::active().name) == "scalar");
    kern::force_kernels(nullptr);
    CHECK(std::string(kern::active().name) == "avx2");
  } else {
    CHECK(std::string(kern::active().name) == "scalar");
  }
}
