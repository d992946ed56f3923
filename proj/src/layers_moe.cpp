#include "rtp/kernels.hpp"
#include "rtp/layers.hpp"

namespace rtp {

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<size_t>& rows) {
  const size_t cols = x.cols();
  Tensor out({rows.size(), cols});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(x.data() + rows[i] * cols, x.data() + (rows[i] + 1) * cols, out.data() + i * cols);
  return out;
}

}  // namespace

RtpMoe::RtpMoe(WorkerGroup& group, std::string label, const Tensor& gate,
               std::span<const ExpertParams> experts, size_t n)
    : RtpLayerBase(group, std::move(label)),
      hidden_(gate.rows()),
      ffn_(experts[0].w1.cols()),
      layout_(layout_moe(experts.size(), n)) {
  if (gate.cols() != n)
    throw ConfigError("gate weight " + gate.shape_str() + " must have one column per expert (" +
                      std::to_string(n) + ")");
  init_slots(moe_shard_groups(experts, n));
  gates_.resize(n);
  gate_grads_.resize(n);
  group_->each([&](size_t r) {
    {
      CategoryScope param_scope(MemCategory::Param);
      gates_[r] = gate;  // replicated
    }
    {
      CategoryScope grad_scope(MemCategory::Grad);
      gate_grads_[r] = Tensor(gate.shape());
    }
  });
  tapes_.resize(n);
  x_cache_.resize(n);
  probs_cache_.resize(n);
  sel_cache_.resize(n);
}

std::vector<Tensor> RtpMoe::forward(std::span<const Tensor> x, Mode mode) {
  require_home("forward");
  const size_t n = this->n();
  std::vector<Tensor> y(n);

  group_->each([&](size_t r) {
    const size_t tokens = x[r].rows();
    y[r] = Tensor({tokens, hidden_});
    Tensor logits = matmul(x[r], gates_[r]);
    Tensor probs = softmax_rows(logits);
    std::vector<size_t> sel(tokens);
    for (size_t t = 0; t < tokens; ++t) sel[t] = argmax_row(probs.data() + t * n, n);
    if (mode == Mode::Train) x_cache_[r] = x[r];
    probs_cache_[r] = std::move(probs);
    sel_cache_[r] = std::move(sel);
  });

  for (size_t s = 0; s < n; ++s) {
    group_->each([&](size_t r) {
      check_forward_position(r, s);
      const size_t j = slots_[r].logical_id;
      const double* w = slots_[r].weight.data();
      const double* w1 = w;
      const double* b1 = w1 + hidden_ * ffn_;
      const double* w2 = b1 + ffn_;
      const double* b2 = w2 + ffn_ * hidden_;

      std::vector<size_t> rows;
      for (size_t t = 0; t < sel_cache_[r].size(); ++t)
        if (sel_cache_[r][t] == j) rows.push_back(t);
      if (rows.empty()) {
        if (mode == Mode::Train) tapes_[r].record(j, Saved{});
        return;
      }

      Tensor xs = gather_rows(x[r], rows);
      Tensor pre1({rows.size(), ffn_});
      kern::active().matmul(xs.data(), hidden_, w1, ffn_, pre1.data(), ffn_, rows.size(),
                            hidden_, ffn_);
      for (size_t i = 0; i < rows.size(); ++i)
        kern::active().add(pre1.data() + i * ffn_, b1, pre1.data() + i * ffn_, ffn_);
      Tensor h1 = gelu(pre1);
      Tensor eout({rows.size(), hidden_});
      kern::active().matmul(h1.data(), ffn_, w2, hidden_, eout.data(), hidden_, rows.size(),
                            ffn_, hidden_);
      for (size_t i = 0; i < rows.size(); ++i)
        kern::active().add(eout.data() + i * hidden_, b2, eout.data() + i * hidden_, hidden_);

      for (size_t i = 0; i < rows.size(); ++i) {
        const double p = probs_cache_[r].at(rows[i], j);
        kern::active().scale(eout.data() + i * hidden_, p, y[r].data() + rows[i] * hidden_,
                             hidden_);
      }
      if (mode == Mode::Train)
        tapes_[r].record(j, Saved{std::move(rows), std::move(pre1), std::move(h1),
                                  std::move(eout)});
    });
    if (s + 1 < n) rotate_forward();
  }
  if (mode == Mode::Eval) {
    group_->each([&](size_t r) {
      probs_cache_[r] = Tensor();
      sel_cache_[r].clear();
    });
    rehome_after_eval();
  }
  return y;
}

std::vector<Tensor> RtpMoe::backward(std::span<const Tensor> dy) {
  const size_t n = this->n();
  std::vector<Tensor> dx(n);
  std::vector<Tensor> dlogits(n);
  group_->each([&](size_t r) {
    dx[r] = Tensor({dy[r].rows(), hidden_});
    dlogits[r] = Tensor({dy[r].rows(), n});
  });

  for (size_t s = 0; s < n; ++s) {
    group_->each([&](size_t r) {
      const size_t j = slots_[r].logical_id;
      Saved saved = tapes_[r].replay(j);
      check_backward_position(r, s);
      const double* w = slots_[r].weight.data();
      const double* w1 = w;
      const double* w2 = w1 + hidden_ * ffn_ + ffn_;
      double* grad = slots_[r].grad_acc.data();
      double* gw1 = grad;
      double* gb1 = gw1 + hidden_ * ffn_;
      double* gw2 = gb1 + ffn_;
      double* gb2 = gw2 + ffn_ * hidden_;

      const auto& rows = saved.rows;
      const size_t cnt = rows.size();
      if (cnt == 0) return;
      const Tensor& probs = probs_cache_[r];

      // Split upstream per token: y_t = p_t · e_t, so de_t = p_t · dy_t and
      // dp_t = dy_t · e_t; dp feeds the selected probability's softmax branch.
      Tensor de({cnt, hidden_});
      for (size_t i = 0; i < cnt; ++i) {
        const size_t t = rows[i];
        const double p = probs.at(t, j);
        kern::active().scale(dy[r].data() + t * hidden_, p, de.data() + i * hidden_, hidden_);
        double dp = 0.0;
        for (size_t c = 0; c < hidden_; ++c)
          dp += dy[r].at(t, c) * saved.expert_out.at(i, c);
        // d softmax: dlogit_k = dp · p_j (δ_jk − p_k)
        const double pj = probs.at(t, j);
        for (size_t k = 0; k < n; ++k) {
          const double d = (k == j ? 1.0 : 0.0) - probs.at(t, k);
          dlogits[r].at(t, k) += dp * pj * d;
        }
      }

      // Expert backward: e = gelu(x·W1 + b1)·W2 + b2
      Tensor xs = gather_rows(x_cache_[r], rows);
      kern::active().matmul_tn_acc(saved.h1.data(), ffn_, de.data(), hidden_, gw2, hidden_,
                                   ffn_, cnt, hidden_);
      for (size_t i = 0; i < cnt; ++i)
        kern::active().add(gb2, de.data() + i * hidden_, gb2, hidden_);
      Tensor dh1({cnt, ffn_});
      kern::active().matmul_nt_acc(de.data(), hidden_, w2, hidden_, dh1.data(), ffn_, cnt,
                                   hidden_, ffn_);
      Tensor dpre1 = gelu_backward(saved.pre1, dh1);
      kern::active().matmul_tn_acc(xs.data(), hidden_, dpre1.data(), ffn_, gw1, ffn_, hidden_,
                                   cnt, ffn_);
      for (size_t i = 0; i < cnt; ++i)
        kern::active().add(gb1, dpre1.data() + i * ffn_, gb1, ffn_);
      Tensor dxs({cnt, hidden_});
      kern::active().matmul_nt_acc(dpre1.data(), ffn_, w1, ffn_, dxs.data(), hidden_, cnt, ffn_,
                                   hidden_);
      for (size_t i = 0; i < cnt; ++i)
        kern::active().add(dx[r].data() + rows[i] * hidden_, dxs.data() + i * hidden_,
                           dx[r].data() + rows[i] * hidden_, hidden_);
    });
    if (s + 1 < n) rotate_backward();
  }

  // Gate path: dX += dLogits · Wg^T, dWg += X^T dLogits.
  group_->each([&](size_t r) {
    const size_t tokens = dy[r].rows();
    kern::active().matmul_nt_acc(dlogits[r].data(), n, gates_[r].data(), n, dx[r].data(),
                                 hidden_, tokens, n, hidden_);
    kern::active().matmul_tn_acc(x_cache_[r].data(), hidden_, dlogits[r].data(), n,
                                 gate_grads_[r].data(), n, hidden_, tokens, n);
    x_cache_[r] = Tensor();
    probs_cache_[r] = Tensor();
    sel_cache_[r].clear();
  });
  require_home("end of backward");
  return dx;
}

void RtpMoe::zero_grads() {
  RtpLayerBase::zero_grads();
  group_->each([&](size_t r) { gate_grads_[r].fill(0.0); });
}

}  // namespace rtp
