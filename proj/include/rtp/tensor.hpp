#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rtp/ledger.hpp"
#include "rtp/rng.hpp"

namespace rtp {

// Dense row-major tensor of 64-bit reals. Values are immutable after
// construction except through the explicit in-place accumulate helpers;
// there is no broadcasting, no views, no autograd.
//
// Construction charges the payload bytes to the calling thread's active
// LedgerScope (if any); destruction releases them. swap_data() exchanges
// buffer contents between equal-sized tensors without touching either
// registration, which is how ring rotation moves shard contents without
// perturbing per-worker byte counts.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape);  // zero-filled
  Tensor(std::vector<size_t> shape, std::vector<double> data);
  ~Tensor();

  Tensor(const Tensor& other);
  Tensor& operator=(const Tensor& other);
  Tensor(Tensor&& other) noexcept;
  Tensor& operator=(Tensor&& other) noexcept;

  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor uniform(std::vector<size_t> shape, SplitMix64& rng, double lo, double hi);

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t dim(size_t i) const { return shape_[i]; }
  size_t numel() const { return data_.size(); }
  size_t bytes() const { return data_.size() * sizeof(double); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> values() const { return data_; }

  double& at(size_t i) { return data_[i]; }
  double at(size_t i) const { return data_[i]; }
  double& at(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
  double at(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }

  // Same element count, new shape; metadata-only on rvalues.
  Tensor reshaped(std::vector<size_t> shape) const&;
  Tensor reshaped(std::vector<size_t> shape) &&;

  size_t rows() const;  // rank-2 only
  size_t cols() const;

  void fill(double v);
  bool all_finite() const;
  std::string shape_str() const;

  // Rotation support: moves the buffer out (leaving the tensor hollow) and
  // back in without touching the ledger charge — residency is logically
  // unchanged while contents are in flight. accept_data requires the buffer
  // length to match the tensor's shape.
  std::vector<double> yield_data();
  void accept_data(std::vector<double> buf);

  friend void swap_data(Tensor& a, Tensor& b);

 private:
  void register_bytes();
  void release_bytes();

  std::vector<size_t> shape_;
  std::vector<double> data_;
  MemoryLedger* ledger_ = nullptr;
  MemCategory category_ = MemCategory::Other;
  size_t charged_bytes_ = 0;
};

std::string shape_str(const std::vector<size_t>& shape);

// --- kernels-backed operations (rank-2 unless noted) ---

Tensor matmul(const Tensor& a, const Tensor& b);                    // a·b
void matmul_tn_acc(Tensor& c, const Tensor& a, const Tensor& b);    // c += aᵀ·b
void matmul_nt_acc(Tensor& c, const Tensor& a, const Tensor& b);    // c += a·bᵀ
Tensor transpose(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);  // any rank, same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double s);
void add_inplace(Tensor& dst, const Tensor& src);
void axpy_inplace(Tensor& dst, double a, const Tensor& src);  // dst += a·src

// --- scalar-path operations ---

Tensor concat(const std::vector<Tensor>& parts, size_t axis);
std::vector<Tensor> split(const Tensor& t, size_t axis, size_t parts);

Tensor softmax_rows(const Tensor& t);  // rank-2; max-subtracted, rows sum to 1
Tensor gelu(const Tensor& t);          // exact: x·Φ(x) via erf
Tensor gelu_backward(const Tensor& x, const Tensor& upstream);

Tensor row_sums(const Tensor& t);  // m×n -> m
Tensor col_sums(const Tensor& t);  // m×n -> n

// table is vocab×emb; returns ids.size()×emb. Out-of-range id -> IndexError.
Tensor embedding_lookup(const Tensor& table, std::span<const int64_t> ids);
// table_grad (vocab×emb) += scatter rows of upstream (ids.size()×emb) by id.
void embedding_scatter_add(Tensor& table_grad, std::span<const int64_t> ids,
                           const Tensor& upstream);

// Σ(pred-target)² and the matching gradient 2·(pred-target)/denom. Sharded
// callers pass the global element count as denom so per-worker gradients
// compose to the full-batch gradient.
double squared_error_sum(const Tensor& pred, const Tensor& target);
Tensor mse_grad(const Tensor& pred, const Tensor& target, size_t denom);
double mse_loss(const Tensor& pred, const Tensor& target);  // mean over elements

}  // namespace rtp
