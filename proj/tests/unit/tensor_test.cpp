#include <doctest.h>

#include <cmath>

#include "rtp/errors.hpp"
#include "rtp/tensor.hpp"

using namespace rtp;

namespace {

Tensor from(std::vector<size_t> shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data));
}

Tensor identity(size_t n) {
  Tensor t({n, n});
  for (size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (size_t i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

}  // namespace

TEST_CASE("matmul identity and permutation examples") {
  Tensor i2 = identity(2);
  CHECK(tensors_equal(matmul(i2, i2), i2));

  Tensor a = from({2, 2}, {1, 2, 3, 4});
  Tensor perm = from({2, 2}, {0, 1, 1, 0});
  Tensor got = matmul(a, perm);
  CHECK(tensors_equal(got, from({2, 2}, {2, 1, 4, 3})));

  // identity is exact on both sides
  SplitMix64 rng(3);
  Tensor t = Tensor::uniform({4, 4}, rng, -1, 1);
  CHECK(tensors_equal(matmul(identity(4), t), t));
  CHECK(tensors_equal(matmul(t, identity(4)), t));
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
  Tensor a({2, 3}), b({4, 2});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  try {
    matmul(a, b);
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("concat basics and errors") {
  Tensor t = from({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(tensors_equal(concat({t}, 0), t));
  CHECK(tensors_equal(concat({t}, 1), t));

  Tensor left = from({2, 1}, {1, 5});
  Tensor right = from({2, 3}, {2, 3, 4, 6, 7, 8});
  CHECK(tensors_equal(concat({left, right}, 1), t));

  Tensor ragged({3, 1});
  CHECK_THROWS_AS(concat({left, ragged}, 1), DimensionError);
}

TEST_CASE("split and concat are mutual inverses") {
  SplitMix64 rng(11);
  Tensor t = Tensor::uniform({4, 8}, rng, -1, 1);
  auto parts = split(t, 1, 4);
  CHECK(parts.size() == 4);
  CHECK(tensors_equal(concat(parts, 1), t));

  for (size_t axis = 0; axis < 3; ++axis) {
    Tensor cube = Tensor::uniform({4, 6, 2}, rng, -1, 1);
    for (size_t parts_n : {1, 2}) {
      auto ps = split(cube, axis, parts_n);
      CHECK(tensors_equal(concat(ps, axis), cube));
    }
  }
  CHECK_THROWS_AS(split(t, 1, 3), DimensionError);
}

TEST_CASE("softmax rows") {
  Tensor equal = from({1, 4}, {2.5, 2.5, 2.5, 2.5});
  Tensor u = softmax_rows(equal);
  for (size_t j = 0; j < 4; ++j) CHECK(u.at(0, j) == doctest::Approx(0.25).epsilon(1e-14));

  Tensor pair = from({1, 2}, {0.0, std::log(3.0)});
  Tensor p = softmax_rows(pair);
  CHECK(p.at(0, 0) == doctest::Approx(0.25).epsilon(1e-13));
  CHECK(p.at(0, 1) == doctest::Approx(0.75).epsilon(1e-13));

  SplitMix64 rng(5);
  Tensor r = Tensor::uniform({5, 7}, rng, -3, 3);
  Tensor s = softmax_rows(r);
  for (size_t i = 0; i < 5; ++i) {
    double sum = 0;
    for (size_t j = 0; j < 7; ++j) sum += s.at(i, j);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }

  // max-subtraction keeps huge logits finite
  Tensor big = from({1, 2}, {1e4, 1e4 + 1});
  CHECK(softmax_rows(big).all_finite());
}

TEST_CASE("gelu values and analytic derivative") {
  Tensor zero({1});
  CHECK(gelu(zero).at(0) == 0.0);

  Tensor ten = from({1}, {10.0});
  CHECK(std::abs(gelu(ten).at(0) - 10.0) < 1e-9);

  // analytic backward vs central differences
  SplitMix64 rng(17);
  Tensor x = Tensor::uniform({4, 4}, rng, -1, 1);
  Tensor ones({4, 4});
  ones.fill(1.0);
  Tensor grad = gelu_backward(x, ones);
  const double h = 1e-6;
  for (size_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x, xm = x;
    xp.at(i) += h;
    xm.at(i) -= h;
    const double fd = (gelu(xp).at(i) - gelu(xm).at(i)) / (2 * h);
    const double rel = std::abs(grad.at(i) - fd) / std::max({std::abs(fd), std::abs(grad.at(i)), 1e-3});
    CHECK(rel < 1e-6);
  }
}

TEST_CASE("transpose, elementwise, row and column sums") {
  Tensor t = from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(tensors_equal(transpose(t), from({3, 2}, {1, 4, 2, 5, 3, 6})));
  CHECK(tensors_equal(transpose(transpose(t)), t));

  Tensor a = from({2, 2}, {1, 2, 3, 4});
  Tensor b = from({2, 2}, {10, 20, 30, 40});
  CHECK(tensors_equal(add(a, b), from({2, 2}, {11, 22, 33, 44})));
  CHECK(tensors_equal(sub(b, a), from({2, 2}, {9, 18, 27, 36})));
  CHECK(tensors_equal(mul(a, b), from({2, 2}, {10, 40, 90, 160})));
  CHECK(tensors_equal(scale(a, 0.5), from({2, 2}, {0.5, 1, 1.5, 2})));

  CHECK(tensors_equal(row_sums(t), from({2}, {6, 15})));
  CHECK(tensors_equal(col_sums(t), from({3}, {5, 7, 9})));
  CHECK_THROWS_AS(add(a, t), DimensionError);
}

TEST_CASE("embedding lookup and scatter-add") {
  Tensor table = from({3, 2}, {1, 2, 3, 4, 5, 6});
  std::vector<int64_t> ids{2, 0, 2};
  Tensor out = embedding_lookup(table, ids);
  CHECK(tensors_equal(out, from({3, 2}, {5, 6, 1, 2, 5, 6})));

  std::vector<int64_t> bad{3};
  CHECK_THROWS_AS(embedding_lookup(table, bad), IndexError);

  Tensor grad({3, 2});
  Tensor up = from({3, 2}, {1, 1, 2, 2, 10, 10});
  embedding_scatter_add(grad, ids, up);
  CHECK(tensors_equal(grad, from({3, 2}, {2, 2, 0, 0, 11, 11})));
}

TEST_CASE("mse loss and gradient with sharded denominator") {
  SplitMix64 rng(23);
  Tensor pred = Tensor::uniform({4, 3}, rng, -1, 1);
  Tensor target = Tensor::uniform({4, 3}, rng, -1, 1);

  const double loss = mse_loss(pred, target);
  Tensor grad = mse_grad(pred, target, pred.numel());
  const double h = 1e-6;
  for (size_t i = 0; i < pred.numel(); ++i) {
    Tensor p = pred;
    p.at(i) += h;
    const double lp = mse_loss(p, target);
    p.at(i) -= 2 * h;
    const double lm = mse_loss(p, target);
    const double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(grad.at(i) - fd) < 1e-8);
  }

  // two half-batches compose to the full loss
  auto halves_p = split(pred, 0, 2);
  auto halves_t = split(target, 0, 2);
  const double partial =
      squared_error_sum(halves_p[0], halves_t[0]) + squared_error_sum(halves_p[1], halves_t[1]);
  CHECK(partial / pred.numel() == doctest::Approx(loss).epsilon(1e-15));
}

TEST_CASE("operations on finite inputs stay finite") {
  SplitMix64 rng(31);
  Tensor a = Tensor::uniform({6, 6}, rng, -1, 1);
  Tensor b = Tensor::uniform({6, 6}, rng, -1, 1);
  CHECK(matmul(a, b).all_finite());
  CHECK(softmax_rows(a).all_finite());
  CHECK(gelu(a).all_finite());
  CHECK(gelu_backward(a, b).all_finite());
  CHECK(add(a, b).all_finite());
}

TEST_CASE("tensor allocations flow through the active ledger scope") {
  MemoryLedger ledger;
  {
    LedgerScope scope(&ledger, MemCategory::Activation);
    Tensor t({4, 4});
    CHECK(ledger.current(MemCategory::Activation) == 128);
    {
      CategoryScope param(MemCategory::Param);
      Tensor w = t;  // copy registers under the narrowed category
      CHECK(ledger.current(MemCategory::Param) == 128);
      Tensor moved = std::move(w);  // move keeps the original charge
      CHECK(ledger.current(MemCategory::Param) == 128);
    }
    CHECK(ledger.current(MemCategory::Param) == 0);
    CHECK(ledger.peak(MemCategory::Param) == 128);

    Tensor other({2, 2});
    swap_data(t, t);  // self-swap allowed
    CHECK_THROWS_AS(swap_data(t, other), DimensionError);
    CHECK(ledger.current(MemCategory::Activation) == 128 + 32);
  }
  CHECK(ledger.current_total() == 0);
  CHECK(ledger.peak_total() == 128 + 128);  // t plus the copy, before the scope closed
}
