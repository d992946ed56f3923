#include "rtp/tensor.hpp"

#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "rtp/errors.hpp"
#include "rtp/kernels.hpp"

namespace rtp {

namespace {
size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return shape.empty() ? 0 : n;
}
}  // namespace

std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
  register_bytes();
}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + rtp::shape_str(shape_));
  register_bytes();
}

Tensor::~Tensor() { release_bytes(); }

Tensor::Tensor(const Tensor& other) : shape_(other.shape_), data_(other.data_) {
  register_bytes();
}

Tensor& Tensor::operator=(const Tensor& other) {
  if (this == &other) return *this;
  release_bytes();
  shape_ = other.shape_;
  data_ = other.data_;
  register_bytes();
  return *this;
}

Tensor::Tensor(Tensor&& other) noexcept
    : shape_(std::move(other.shape_)),
      data_(std::move(other.data_)),
      ledger_(other.ledger_),
      category_(other.category_),
      charged_bytes_(other.charged_bytes_) {
  other.shape_.clear();
  other.ledger_ = nullptr;
  other.charged_bytes_ = 0;
}

Tensor& Tensor::operator=(Tensor&& other) noexcept {
  if (this == &other) return *this;
  release_bytes();
  shape_ = std::move(other.shape_);
  data_ = std::move(other.data_);
  ledger_ = other.ledger_;
  category_ = other.category_;
  charged_bytes_ = other.charged_bytes_;
  other.shape_.clear();
  other.ledger_ = nullptr;
  other.charged_bytes_ = 0;
  return *this;
}

void Tensor::register_bytes() {
  ledger_ = LedgerScope::current_ledger();
  category_ = LedgerScope::current_category();
  charged_bytes_ = bytes();
  if (ledger_ && charged_bytes_) ledger_->on_alloc(category_, charged_bytes_);
}

void Tensor::release_bytes() {
  if (ledger_ && charged_bytes_) ledger_->on_release(category_, charged_bytes_);
  ledger_ = nullptr;
  charged_bytes_ = 0;
}

Tensor Tensor::uniform(std::vector<size_t> shape, SplitMix64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = rng.next_uniform(lo, hi);
  return t;
}

Tensor Tensor::reshaped(std::vector<size_t> shape) const& {
  Tensor copy(*this);
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(std::vector<size_t> shape) && {
  if (shape_numel(shape) != numel())
    throw DimensionError("cannot reshape " + rtp::shape_str(shape_) + " to " + rtp::shape_str(shape));
  shape_ = std::move(shape);
  return std::move(*this);
}

size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected rank-2 tensor, got " + rtp::shape_str(shape_));
  return shape_[0];
}

size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected rank-2 tensor, got " + rtp::shape_str(shape_));
  return shape_[1];
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const { return rtp::shape_str(shape_); }

std::vector<double> Tensor::yield_data() {
  std::vector<double> out = std::move(data_);
  data_.clear();
  return out;
}

void Tensor::accept_data(std::vector<double> buf) {
  if (buf.size() != shape_numel(shape_))
    throw DimensionError("accept_data: buffer length " + std::to_string(buf.size()) +
                         " does not match shape " + shape_str());
  data_ = std::move(buf);
}

void swap_data(Tensor& a, Tensor& b) {
  if (a.numel() != b.numel())
    throw DimensionError("swap_data requires equal sizes, got " + a.shape_str() + " and " +
                         b.shape_str());
  a.data_.swap(b.data_);
}

// --- operations ---

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
  Tensor c({a.rows(), b.cols()});
  kern::active().matmul(a.data(), a.cols(), b.data(), b.cols(), c.data(), c.cols(), a.rows(),
                        a.cols(), b.cols());
  return c;
}

void matmul_tn_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() || c.rows() != a.cols() ||
      c.cols() != b.cols())
    throw DimensionError("matmul_tn_acc: incompatible shapes " + a.shape_str() + "ᵀ x " +
                         b.shape_str() + " -> " + c.shape_str());
  kern::active().matmul_tn_acc(a.data(), a.cols(), b.data(), b.cols(), c.data(), c.cols(),
                               a.cols(), a.rows(), b.cols());
}

void matmul_nt_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() || c.rows() != a.rows() ||
      c.cols() != b.rows())
    throw DimensionError("matmul_nt_acc: incompatible shapes " + a.shape_str() + " x " +
                         b.shape_str() + "ᵀ -> " + c.shape_str());
  kern::active().matmul_nt_acc(a.data(), a.cols(), b.data(), b.cols(), c.data(), c.cols(),
                               a.rows(), a.cols(), b.rows());
}

Tensor transpose(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("transpose: expected rank-2, got " + t.shape_str());
  Tensor out({t.cols(), t.rows()});
  kern::active().transpose(t.data(), out.data(), t.rows(), t.cols());
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  kern::active().add(a.data(), b.data(), out.data(), a.numel());
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  kern::active().sub(a.data(), b.data(), out.data(), a.numel());
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  kern::active().mul(a.data(), b.data(), out.data(), a.numel());
  return out;
}

Tensor scale(const Tensor& t, double s) {
  Tensor out(t.shape());
  kern::active().scale(t.data(), s, out.data(), t.numel());
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  check_same_shape(dst, src, "add_inplace");
  kern::active().add(dst.data(), src.data(), dst.data(), dst.numel());
}

void axpy_inplace(Tensor& dst, double a, const Tensor& src) {
  check_same_shape(dst, src, "axpy_inplace");
  kern::active().axpy(a, src.data(), dst.data(), dst.numel());
}

Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  const auto& base = parts.front().shape();
  if (axis >= base.size())
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(base));
  std::vector<size_t> out_shape = base;
  size_t concat_dim = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != base.size())
      throw DimensionError("concat: rank mismatch " + p.shape_str() + " vs " + shape_str(base));
    for (size_t d = 0; d < base.size(); ++d)
      if (d != axis && p.shape()[d] != base[d])
        throw DimensionError("concat: ragged shapes " + p.shape_str() + " vs " + shape_str(base) +
                             " on axis " + std::to_string(d));
    concat_dim += p.shape()[axis];
  }
  out_shape[axis] = concat_dim;

  // outer = product of dims before axis, inner = product after.
  size_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= base[d];
  for (size_t d = axis + 1; d < base.size(); ++d) inner *= base[d];

  Tensor out(out_shape);
  size_t col_offset = 0;
  for (const Tensor& p : parts) {
    const size_t p_axis = p.shape()[axis];
    for (size_t o = 0; o < outer; ++o) {
      const double* src = p.data() + o * p_axis * inner;
      double* dst = out.data() + (o * concat_dim + col_offset) * inner;
      std::copy(src, src + p_axis * inner, dst);
    }
    col_offset += p_axis;
  }
  return out;
}

std::vector<Tensor> split(const Tensor& t, size_t axis, size_t parts) {
  if (axis >= t.rank())
    throw DimensionError("split: axis " + std::to_string(axis) + " out of range for " +
                         t.shape_str());
  if (parts == 0 || t.shape()[axis] % parts != 0)
    throw DimensionError("split: dimension " + std::to_string(t.shape()[axis]) +
                         " not divisible into " + std::to_string(parts) + " parts");
  const size_t piece = t.shape()[axis] / parts;
  size_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= t.shape()[d];
  for (size_t d = axis + 1; d < t.rank(); ++d) inner *= t.shape()[d];

  std::vector<size_t> piece_shape = t.shape();
  piece_shape[axis] = piece;
  std::vector<Tensor> out;
  out.reserve(parts);
  for (size_t p = 0; p < parts; ++p) {
    Tensor part(piece_shape);
    for (size_t o = 0; o < outer; ++o) {
      const double* src = t.data() + (o * t.shape()[axis] + p * piece) * inner;
      std::copy(src, src + piece * inner, part.data() + o * piece * inner);
    }
    out.push_back(std::move(part));
  }
  return out;
}

Tensor softmax_rows(const Tensor& t) {
  const size_t m = t.rows(), n = t.cols();
  Tensor out({m, n});
  for (size_t i = 0; i < m; ++i) {
    const double* row = t.data() + i * n;
    double* orow = out.data() + i * n;
    double mx = row[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (size_t j = 0; j < n; ++j) orow[j] /= sum;
  }
  return out;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& t) {
  Tensor out(t.shape());
  const double* x = t.data();
  double* y = out.data();
  for (size_t i = 0; i < t.numel(); ++i) {
    const double phi = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
    y[i] = x[i] * phi;
  }
  return out;
}

Tensor gelu_backward(const Tensor& x, const Tensor& upstream) {
  check_same_shape(x, upstream, "gelu_backward");
  Tensor out(x.shape());
  const double* xv = x.data();
  const double* up = upstream.data();
  double* y = out.data();
  for (size_t i = 0; i < x.numel(); ++i) {
    const double phi = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv[i] * xv[i]);
    y[i] = up[i] * (phi + xv[i] * pdf);
  }
  return out;
}

Tensor row_sums(const Tensor& t) {
  const size_t m = t.rows(), n = t.cols();
  Tensor out({m});
  for (size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) s += t.at(i, j);
    out.at(i) = s;
  }
  return out;
}

Tensor col_sums(const Tensor& t) {
  const size_t m = t.rows(), n = t.cols();
  Tensor out({n});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out.at(j) += t.at(i, j);
  return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int64_t> ids) {
  const size_t vocab = table.rows(), emb = table.cols();
  Tensor out({ids.size(), emb});
  for (size_t i = 0; i < ids.size(); ++i) {
    const int64_t id = ids[i];
    if (id < 0 || static_cast<size_t>(id) >= vocab)
      throw IndexError("embedding id " + std::to_string(id) + " outside vocab of " +
                       std::to_string(vocab));
    std::copy(table.data() + id * emb, table.data() + (id + 1) * emb, out.data() + i * emb);
  }
  return out;
}

void embedding_scatter_add(Tensor& table_grad, std::span<const int64_t> ids,
                           const Tensor& upstream) {
  const size_t vocab = table_grad.rows(), emb = table_grad.cols();
  if (upstream.rows() != ids.size() || upstream.cols() != emb)
    throw DimensionError("embedding_scatter_add: upstream " + upstream.shape_str() +
                         " does not match " + std::to_string(ids.size()) + " ids x " +
                         std::to_string(emb));
  for (size_t i = 0; i < ids.size(); ++i) {
    const int64_t id = ids[i];
    if (id < 0 || static_cast<size_t>(id) >= vocab)
      throw IndexError("embedding id " + std::to_string(id) + " outside vocab of " +
                       std::to_string(vocab));
    kern::active().axpy(1.0, upstream.data() + i * emb, table_grad.data() + id * emb, emb);
  }
}

double squared_error_sum(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "squared_error_sum");
  double s = 0.0;
  for (size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.at(i) - target.at(i);
    s += d * d;
  }
  return s;
}

Tensor mse_grad(const Tensor& pred, const Tensor& target, size_t denom) {
  check_same_shape(pred, target, "mse_grad");
  Tensor out(pred.shape());
  const double inv = 2.0 / static_cast<double>(denom);
  for (size_t i = 0; i < pred.numel(); ++i) out.at(i) = inv * (pred.at(i) - target.at(i));
  return out;
}

double mse_loss(const Tensor& pred, const Tensor& target) {
  return squared_error_sum(pred, target) / static_cast<double>(pred.numel());
}

}  // namespace rtp
