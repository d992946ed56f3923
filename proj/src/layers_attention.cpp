#include <cmath>

#include "rtp/kernels.hpp"
#include "rtp/layers.hpp"

namespace rtp {

namespace {

// Copies one (sequence, head) tile between a packed rows x width matrix and
// an s x head_dim working block.
void read_head(const Tensor& src, size_t b, size_t h, size_t seq, size_t hd, Tensor& dst) {
  const size_t width = src.cols();
  for (size_t t = 0; t < seq; ++t)
    std::copy(src.data() + (b * seq + t) * width + h * hd,
              src.data() + (b * seq + t) * width + h * hd + hd, dst.data() + t * hd);
}

void write_head(Tensor& dst, size_t b, size_t h, size_t seq, size_t hd, const Tensor& src) {
  const size_t width = dst.cols();
  for (size_t t = 0; t < seq; ++t)
    std::copy(src.data() + t * hd, src.data() + (t + 1) * hd,
              dst.data() + (b * seq + t) * width + h * hd);
}

// ds = probs ∘ (dprobs - rowsum(dprobs ∘ probs))
Tensor softmax_backward_rows(const Tensor& probs, const Tensor& dprobs) {
  const size_t m = probs.rows(), n = probs.cols();
  Tensor ds({m, n});
  for (size_t i = 0; i < m; ++i) {
    double dot = 0.0;
    for (size_t j = 0; j < n; ++j) dot += dprobs.at(i, j) * probs.at(i, j);
    for (size_t j = 0; j < n; ++j) ds.at(i, j) = probs.at(i, j) * (dprobs.at(i, j) - dot);
  }
  return ds;
}

}  // namespace

RtpAttention::RtpAttention(WorkerGroup& group, std::string label, const Tensor& wq,
                           const Tensor& wk, const Tensor& wv, const Tensor& wo, size_t heads,
                           size_t seq, size_t n)
    : RtpLayerBase(group, std::move(label)),
      hidden_(wq.rows()),
      heads_(heads),
      seq_(seq),
      head_dim_(wq.rows() / heads),
      group_heads_(heads / n),
      group_width_((heads / n) * (wq.rows() / heads)),
      layout_(layout_attention(wq.rows(), heads, n)) {
  init_slots(attention_shard_groups(wq, wk, wv, wo, heads, n));
  tapes_.resize(n);
  x_cache_.resize(n);
}

std::vector<Tensor> RtpAttention::forward(std::span<const Tensor> x, Mode mode) {
  require_home("forward");
  const size_t n = this->n();
  const size_t gw = group_width_, hd = head_dim_, g = group_heads_;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<Tensor> y(n);
  group_->each([&](size_t r) {
    y[r] = Tensor({x[r].rows(), hidden_});
    if (mode == Mode::Train) x_cache_[r] = x[r];
  });

  for (size_t s = 0; s < n; ++s) {
    group_->each([&](size_t r) {
      check_forward_position(r, s);
      const size_t j = slots_[r].logical_id;
      const size_t rows = x[r].rows();
      const size_t batch = rows / seq_;
      const double* w = slots_[r].weight.data();
      const double* wq = w;
      const double* wk = w + hidden_ * gw;
      const double* wv = w + 2 * hidden_ * gw;
      const double* wo = w + 3 * hidden_ * gw;

      Tensor q({rows, gw}), k({rows, gw}), v({rows, gw});
      kern::active().matmul(x[r].data(), hidden_, wq, gw, q.data(), gw, rows, hidden_, gw);
      kern::active().matmul(x[r].data(), hidden_, wk, gw, k.data(), gw, rows, hidden_, gw);
      kern::active().matmul(x[r].data(), hidden_, wv, gw, v.data(), gw, rows, hidden_, gw);

      Tensor probs({batch * g * seq_, seq_});
      Tensor attn_out({rows, gw});
      Tensor qbh({seq_, hd}), kbh({seq_, hd}), vbh({seq_, hd});
      for (size_t b = 0; b < batch; ++b) {
        for (size_t h = 0; h < g; ++h) {
          read_head(q, b, h, seq_, hd, qbh);
          read_head(k, b, h, seq_, hd, kbh);
          read_head(v, b, h, seq_, hd, vbh);
          Tensor scores({seq_, seq_});
          kern::active().matmul_nt_acc(qbh.data(), hd, kbh.data(), hd, scores.data(), seq_, seq_,
                                       hd, seq_);
          kern::active().scale(scores.data(), inv_sqrt_hd, scores.data(), scores.numel());
          Tensor pbh = softmax_rows(scores);
          Tensor obh = matmul(pbh, vbh);
          write_head(attn_out, b, h, seq_, hd, obh);
          std::copy(pbh.data(), pbh.data() + pbh.numel(),
                    probs.data() + (b * g + h) * seq_ * seq_);
        }
      }
      // Partial sums accumulate directly into the output as they arrive.
      kern::active().matmul_acc(attn_out.data(), gw, wo, hidden_, y[r].data(), hidden_, rows, gw,
                                hidden_);
      if (mode == Mode::Train)
        tapes_[r].record(j, Saved{std::move(q), std::move(k), std::move(v), std::move(probs),
                                  std::move(attn_out)});
      (void)j;
    });
    if (s + 1 < n) rotate_forward();
  }
  if (mode == Mode::Eval) rehome_after_eval();
  return y;
}

std::vector<Tensor> RtpAttention::backward(std::span<const Tensor> dy) {
  const size_t n = this->n();
  const size_t gw = group_width_, hd = head_dim_, g = group_heads_;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<Tensor> dx(n);
  group_->each([&](size_t r) { dx[r] = Tensor({dy[r].rows(), hidden_}); });

  for (size_t s = 0; s < n; ++s) {
    group_->each([&](size_t r) {
      const size_t j = slots_[r].logical_id;
      Saved saved = tapes_[r].replay(j);
      check_backward_position(r, s);
      const size_t rows = dy[r].rows();
      const size_t batch = rows / seq_;
      const double* w = slots_[r].weight.data();
      const double* wq = w;
      const double* wk = w + hidden_ * gw;
      const double* wv = w + 2 * hidden_ * gw;
      const double* wo = w + 3 * hidden_ * gw;
      double* grad = slots_[r].grad_acc.data();
      double* gq = grad;
      double* gk = grad + hidden_ * gw;
      double* gv = grad + 2 * hidden_ * gw;
      double* go = grad + 3 * hidden_ * gw;

      // dWo_j += A^T dY ; dA = dY Wo_j^T
      kern::active().matmul_tn_acc(saved.attn_out.data(), gw, dy[r].data(), hidden_, go, hidden_,
                                   gw, rows, hidden_);
      Tensor da({rows, gw});
      kern::active().matmul_nt_acc(dy[r].data(), hidden_, wo, hidden_, da.data(), gw, rows,
                                   hidden_, gw);

      Tensor dq({rows, gw}), dk({rows, gw}), dv({rows, gw});
      Tensor dobh({seq_, hd}), qbh({seq_, hd}), kbh({seq_, hd}), vbh({seq_, hd});
      for (size_t b = 0; b < batch; ++b) {
        for (size_t h = 0; h < g; ++h) {
          read_head(da, b, h, seq_, hd, dobh);
          read_head(saved.q, b, h, seq_, hd, qbh);
          read_head(saved.k, b, h, seq_, hd, kbh);
          read_head(saved.v, b, h, seq_, hd, vbh);
          Tensor pbh({seq_, seq_});
          std::copy(saved.probs.data() + (b * g + h) * seq_ * seq_,
                    saved.probs.data() + (b * g + h + 1) * seq_ * seq_, pbh.data());

          Tensor dprobs({seq_, seq_});
          kern::active().matmul_nt_acc(dobh.data(), hd, vbh.data(), hd, dprobs.data(), seq_,
                                       seq_, hd, seq_);
          Tensor dvbh({seq_, hd});
          kern::active().matmul_tn_acc(pbh.data(), seq_, dobh.data(), hd, dvbh.data(), hd, seq_,
                                       seq_, hd);

          Tensor ds = softmax_backward_rows(pbh, dprobs);
          kern::active().scale(ds.data(), inv_sqrt_hd, ds.data(), ds.numel());

          Tensor dqbh = matmul(ds, kbh);
          Tensor dkbh({seq_, hd});
          kern::active().matmul_tn_acc(ds.data(), seq_, qbh.data(), hd, dkbh.data(), hd, seq_,
                                       seq_, hd);

          write_head(dq, b, h, seq_, hd, dqbh);
          write_head(dk, b, h, seq_, hd, dkbh);
          write_head(dv, b, h, seq_, hd, dvbh);
        }
      }
      // dWq_j += X^T dQ (same for K, V)
      const double* xr = x_cache_[r].data();
      kern::active().matmul_tn_acc(xr, hidden_, dq.data(), gw, gq, gw, hidden_, rows, gw);
      kern::active().matmul_tn_acc(xr, hidden_, dk.data(), gw, gk, gw, hidden_, rows, gw);
      kern::active().matmul_tn_acc(xr, hidden_, dv.data(), gw, gv, gw, hidden_, rows, gw);
      // dX += dQ Wq^T + dK Wk^T + dV Wv^T
      kern::active().matmul_nt_acc(dq.data(), gw, wq, gw, dx[r].data(), hidden_, rows, gw,
                                   hidden_);
      kern::active().matmul_nt_acc(dk.data(), gw, wk, gw, dx[r].data(), hidden_, rows, gw,
                                   hidden_);
      kern::active().matmul_nt_acc(dv.data(), gw, wv, gw, dx[r].data(), hidden_, rows, gw,
                                   hidden_);
    });
    if (s + 1 < n) rotate_backward();
  }
  group_->each([&](size_t r) { x_cache_[r] = Tensor(); });
  require_home("end of backward");
  return dx;
}

}  // namespace rtp
