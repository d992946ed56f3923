#include "rtp/kernels.hpp"
#include "rtp/layers.hpp"

namespace rtp {

RtpLinear::RtpLinear(WorkerGroup& group, std::string label, const Tensor& weight,
                     const Tensor& bias, size_t n)
    : RtpLayerBase(group, std::move(label)),
      in_(weight.rows()),
      out_(weight.cols()),
      per_(weight.cols() / n),
      layout_(layout_linear(weight.rows(), weight.cols(), n)) {
  init_slots(linear_shard_groups(weight, bias, n));
  tapes_.resize(n);
  x_cache_.resize(n);
}

std::vector<Tensor> RtpLinear::forward(std::span<const Tensor> x, Mode mode) {
  require_home("forward");
  const size_t n = this->n();
  std::vector<Tensor> y(n);
  group_->each([&](size_t r) {
    y[r] = Tensor({x[r].rows(), out_});
    if (mode == Mode::Train) x_cache_[r] = x[r];
  });
  for (size_t s = 0; s < n; ++s) {
    group_->each([&](size_t r) {
      check_forward_position(r, s);
      const size_t j = slots_[r].logical_id;
      const size_t rows = x[r].rows();
      const double* wj = slots_[r].weight.data();  // in x per
      const double* bj = wj + in_ * per_;
      // Column block written in place at the shard's canonical position.
      double* block = y[r].data() + j * per_;
      kern::active().matmul(x[r].data(), in_, wj, per_, block, out_, rows, in_, per_);
      for (size_t i = 0; i < rows; ++i)
        kern::active().add(block + i * out_, bj, block + i * out_, per_);
      if (mode == Mode::Train) tapes_[r].record(j, {});
    });
    if (s + 1 < n) rotate_forward();
  }
  if (mode == Mode::Eval) rehome_after_eval();
  return y;
}

std::vector<Tensor> RtpLinear::backward(std::span<const Tensor> dy) {
  const size_t n = this->n();
  std::vector<Tensor> dx(n);
  group_->each([&](size_t r) { dx[r] = Tensor({dy[r].rows(), in_}); });
  for (size_t s = 0; s < n; ++s) {
    group_->each([&](size_t r) {
      const size_t j = slots_[r].logical_id;
      tapes_[r].replay(j);
      check_backward_position(r, s);
      const size_t rows = dy[r].rows();
      const double* dyj = dy[r].data() + j * per_;  // strided block view
      const double* wj = slots_[r].weight.data();
      double* gw = slots_[r].grad_acc.data();
      double* gb = gw + in_ * per_;
      // dW_j += X^T dY_j
      kern::active().matmul_tn_acc(x_cache_[r].data(), in_, dyj, out_, gw, per_, in_, rows, per_);
      // db_j += column sums of dY_j
      for (size_t i = 0; i < rows; ++i) kern::active().add(gb, dyj + i * out_, gb, per_);
      // dX += dY_j W_j^T
      kern::active().matmul_nt_acc(dyj, out_, wj, per_, dx[r].data(), in_, rows, per_, in_);
    });
    if (s + 1 < n) rotate_backward();
  }
  group_->each([&](size_t r) { x_cache_[r] = Tensor(); });
  require_home("end of backward");
  return dx;
}

RtpEmbedding::RtpEmbedding(WorkerGroup& group, std::string label, const Tensor& table, size_t n)
    : RtpLayerBase(group, std::move(label)),
      vocab_(table.rows()),
      emb_(table.cols()),
      per_(table.cols() / n),
      layout_(layout_linear(table.rows(), table.cols(), n)) {
  init_slots(embedding_shard_groups(table, n));
  tapes_.resize(n);
  ids_cache_.resize(n);
}

std::vector<Tensor> RtpEmbedding::forward(std::span<const std::vector<int64_t>> ids, Mode mode) {
  require_home("forward");
  const size_t n = this->n();
  std::vector<Tensor> y(n);
  group_->each([&](size_t r) {
    y[r] = Tensor({ids[r].size(), emb_});
    if (mode == Mode::Train) ids_cache_[r] = ids[r];
  });
  for (size_t s = 0; s < n; ++s) {
    group_->each([&](size_t r) {
      check_forward_position(r, s);
      const size_t j = slots_[r].logical_id;
      const double* block = slots_[r].weight.data();  // vocab x per
      for (size_t i = 0; i < ids[r].size(); ++i) {
        const int64_t id = ids[r][i];
        if (id < 0 || static_cast<size_t>(id) >= vocab_)
          throw IndexError("embedding id " + std::to_string(id) + " outside vocab of " +
                           std::to_string(vocab_));
        std::copy(block + id * per_, block + (id + 1) * per_, y[r].data() + i * emb_ + j * per_);
      }
      if (mode == Mode::Train) tapes_[r].record(j, {});
    });
    if (s + 1 < n) rotate_forward();
  }
  if (mode == Mode::Eval) rehome_after_eval();
  return y;
}

void RtpEmbedding::backward(std::span<const Tensor> dy,
                            const std::function<void()>& after_last_rotation) {
  const size_t n = this->n();
  for (size_t s = 0; s < n; ++s) {
    if (s + 1 == n && after_last_rotation) after_last_rotation();
    group_->each([&](size_t r) {
      const size_t j = slots_[r].logical_id;
      tapes_[r].replay(j);
      check_backward_position(r, s);
      double* grad = slots_[r].grad_acc.data();  // vocab x per
      const auto& ids = ids_cache_[r];
      for (size_t i = 0; i < ids.size(); ++i) {
        const int64_t id = ids[i];
        if (id < 0 || static_cast<size_t>(id) >= vocab_)
          throw IndexError("embedding id " + std::to_string(id) + " outside vocab of " +
                           std::to_string(vocab_));
        kern::active().axpy(1.0, dy[r].data() + i * emb_ + j * per_, grad + id * per_, per_);
      }
    });
    if (s + 1 < n) rotate_backward();
  }
  group_->each([&](size_t r) { ids_cache_[r].clear(); });
  require_home("end of backward");
}

}  // namespace rtp
