#include "rtp/serial.hpp"

#include <cmath>

#include "rtp/errors.hpp"
#include "rtp/kernels.hpp"

namespace rtp {

namespace {

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

Tensor add_bias_rows(Tensor t, const Tensor& bias) {
  const size_t rows = t.rows(), cols = t.cols();
  for (size_t i = 0; i < rows; ++i)
    kern::active().add(t.data() + i * cols, bias.data(), t.data() + i * cols, cols);
  return t;
}

Tensor gather_rows(const Tensor& x, const std::vector<size_t>& rows) {
  const size_t cols = x.cols();
  Tensor out({rows.size(), cols});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(x.data() + rows[i] * cols, x.data() + (rows[i] + 1) * cols, out.data() + i * cols);
  return out;
}

Tensor grad_tensor(const Tensor& like) {
  CategoryScope grad_scope(MemCategory::Grad);
  return Tensor(like.shape());
}

}  // namespace

SerialLinear::SerialLinear(Tensor weight, Tensor bias)
    : w(std::move(weight)), b(std::move(bias)), gw(grad_tensor(w)), gb(grad_tensor(b)) {}

Tensor SerialLinear::forward(const Tensor& x, Mode mode) {
  if (mode == Mode::Train) x_cache = x;
  return add_bias_rows(matmul(x, w), b);
}

Tensor SerialLinear::backward(const Tensor& dy) {
  if (x_cache.empty()) throw StateError("linear backward invoked without a matching forward");
  matmul_tn_acc(gw, x_cache, dy);
  const size_t rows = dy.rows(), cols = dy.cols();
  for (size_t i = 0; i < rows; ++i)
    kern::active().add(gb.data(), dy.data() + i * cols, gb.data(), cols);
  Tensor dx({dy.rows(), w.rows()});
  matmul_nt_acc(dx, dy, w);
  x_cache = Tensor();
  return dx;
}

void SerialLinear::zero_grads() {
  gw.fill(0.0);
  gb.fill(0.0);
}

SerialEmbedding::SerialEmbedding(Tensor t) : table(std::move(t)), gtable(grad_tensor(table)) {}

Tensor SerialEmbedding::forward(std::span<const int64_t> ids, Mode mode) {
  if (mode == Mode::Train) ids_cache.assign(ids.begin(), ids.end());
  return embedding_lookup(table, ids);
}

void SerialEmbedding::backward(const Tensor& dy) {
  if (ids_cache.empty()) throw StateError("embedding backward invoked without a matching forward");
  embedding_scatter_add(gtable, ids_cache, dy);
  ids_cache.clear();
}

void SerialEmbedding::zero_grads() { gtable.fill(0.0); }

SerialAttention::SerialAttention(Tensor q, Tensor k, Tensor v, Tensor o, size_t heads_in,
                                 size_t seq_in)
    : wq(std::move(q)),
      wk(std::move(k)),
      wv(std::move(v)),
      wo(std::move(o)),
      gq(grad_tensor(wq)),
      gk(grad_tensor(wk)),
      gv(grad_tensor(wv)),
      go(grad_tensor(wo)),
      heads(heads_in),
      seq(seq_in),
      head_dim(wq.cols() / heads_in) {}

Tensor SerialAttention::forward(const Tensor& x, Mode mode) {
  const size_t width = wq.cols();
  const size_t rows = x.rows();
  const size_t batch = rows / seq;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
  Tensor probs({batch * heads * seq, seq});
  Tensor attn_out({rows, width});
  Tensor qbh({seq, head_dim}), kbh({seq, head_dim}), vbh({seq, head_dim});
  for (size_t b = 0; b < batch; ++b) {
    for (size_t h = 0; h < heads; ++h) {
      read_head(q, b, h, seq, head_dim, qbh);
      read_head(k, b, h, seq, head_dim, kbh);
      read_head(v, b, h, seq, head_dim, vbh);
      Tensor scores({seq, seq});
      kern::active().matmul_nt_acc(qbh.data(), head_dim, kbh.data(), head_dim, scores.data(),
                                   seq, seq, head_dim, seq);
      kern::active().scale(scores.data(), inv_sqrt_hd, scores.data(), scores.numel());
      Tensor pbh = softmax_rows(scores);
      Tensor obh = matmul(pbh, vbh);
      write_head(attn_out, b, h, seq, head_dim, obh);
      std::copy(pbh.data(), pbh.data() + pbh.numel(), probs.data() + (b * heads + h) * seq * seq);
    }
  }
  Tensor y = matmul(attn_out, wo);
  if (mode == Mode::Train) {
    x_cache = x;
    q_cache = std::move(q);
    k_cache = std::move(k);
    v_cache = std::move(v);
    probs_cache = std::move(probs);
    attn_cache = attn_out;
  }
  return y;
}

Tensor SerialAttention::backward(const Tensor& dy) {
  if (x_cache.empty()) throw StateError("attention backward invoked without a matching forward");
  const size_t width = wq.cols();
  const size_t rows = dy.rows();
  const size_t batch = rows / seq;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(head_dim));

  matmul_tn_acc(go, attn_cache, dy);
  Tensor da({rows, width});
  matmul_nt_acc(da, dy, wo);

  Tensor dq({rows, width}), dk({rows, width}), dv({rows, width});
  Tensor dobh({seq, head_dim}), qbh({seq, head_dim}), kbh({seq, head_dim}), vbh({seq, head_dim});
  for (size_t b = 0; b < batch; ++b) {
    for (size_t h = 0; h < heads; ++h) {
      read_head(da, b, h, seq, head_dim, dobh);
      read_head(q_cache, b, h, seq, head_dim, qbh);
      read_head(k_cache, b, h, seq, head_dim, kbh);
      read_head(v_cache, b, h, seq, head_dim, vbh);
      Tensor pbh({seq, seq});
      std::copy(probs_cache.data() + (b * heads + h) * seq * seq,
                probs_cache.data() + (b * heads + h + 1) * seq * seq, pbh.data());

      Tensor dprobs({seq, seq});
      kern::active().matmul_nt_acc(dobh.data(), head_dim, vbh.data(), head_dim, dprobs.data(),
                                   seq, seq, head_dim, seq);
      Tensor dvbh({seq, head_dim});
      kern::active().matmul_tn_acc(pbh.data(), seq, dobh.data(), head_dim, dvbh.data(), head_dim,
                                   seq, seq, head_dim);

      Tensor ds = softmax_backward_rows(pbh, dprobs);
      kern::active().scale(ds.data(), inv_sqrt_hd, ds.data(), ds.numel());
      Tensor dqbh = matmul(ds, kbh);
      Tensor dkbh({seq, head_dim});
      kern::active().matmul_tn_acc(ds.data(), seq, qbh.data(), head_dim, dkbh.data(), head_dim,
                                   seq, seq, head_dim);

      write_head(dq, b, h, seq, head_dim, dqbh);
      write_head(dk, b, h, seq, head_dim, dkbh);
      write_head(dv, b, h, seq, head_dim, dvbh);
    }
  }
  matmul_tn_acc(gq, x_cache, dq);
  matmul_tn_acc(gk, x_cache, dk);
  matmul_tn_acc(gv, x_cache, dv);
  Tensor dx({rows, wq.rows()});
  matmul_nt_acc(dx, dq, wq);
  matmul_nt_acc(dx, dk, wk);
  matmul_nt_acc(dx, dv, wv);
  x_cache = Tensor();
  q_cache = k_cache = v_cache = probs_cache = attn_cache = Tensor();
  return dx;
}

void SerialAttention::zero_grads() {
  gq.fill(0.0);
  gk.fill(0.0);
  gv.fill(0.0);
  go.fill(0.0);
}

SerialMoe::SerialMoe(Tensor g, std::vector<ExpertParams> e)
    : gate(std::move(g)), ggate(grad_tensor(gate)), experts(std::move(e)) {
  CategoryScope grad_scope(MemCategory::Grad);
  grads.resize(experts.size());
  for (size_t j = 0; j < experts.size(); ++j) {
    grads[j].w1 = Tensor(experts[j].w1.shape());
    grads[j].b1 = Tensor(experts[j].b1.shape());
    grads[j].w2 = Tensor(experts[j].w2.shape());
    grads[j].b2 = Tensor(experts[j].b2.shape());
  }
}

Tensor SerialMoe::forward(const Tensor& x, Mode mode) {
  const size_t tokens = x.rows();
  const size_t hidden = gate.rows();
  const size_t n = experts.size();

  Tensor probs = softmax_rows(matmul(x, gate));
  std::vector<size_t> sel(tokens);
  for (size_t t = 0; t < tokens; ++t) sel[t] = argmax_row(probs.data() + t * n, n);

  Tensor y({tokens, hidden});
  std::vector<ExpertCache> expert_caches(n);
  for (size_t j = 0; j < n; ++j) {
    std::vector<size_t> rows;
    for (size_t t = 0; t < tokens; ++t)
      if (sel[t] == j) rows.push_back(t);
    if (rows.empty()) {
      if (mode == Mode::Train) expert_caches[j] = ExpertCache{};
      continue;
    }
    Tensor xs = gather_rows(x, rows);
    Tensor pre1 = add_bias_rows(matmul(xs, experts[j].w1), experts[j].b1);
    Tensor h1 = gelu(pre1);
    Tensor eout = add_bias_rows(matmul(h1, experts[j].w2), experts[j].b2);
    for (size_t i = 0; i < rows.size(); ++i)
      kern::active().scale(eout.data() + i * hidden, probs.at(rows[i], j),
                           y.data() + rows[i] * hidden, hidden);
    if (mode == Mode::Train)
      expert_caches[j] =
          ExpertCache{std::move(rows), std::move(pre1), std::move(h1), std::move(eout)};
  }
  if (mode == Mode::Train) {
    x_cache = x;
    probs_cache = std::move(probs);
    sel_cache = std::move(sel);
    caches = std::move(expert_caches);
  }
  return y;
}

Tensor SerialMoe::backward(const Tensor& dy) {
  if (x_cache.empty()) throw StateError("moe backward invoked without a matching forward");
  const size_t tokens = dy.rows();
  const size_t hidden = gate.rows();
  const size_t n = experts.size();

  Tensor dx({tokens, hidden});
  Tensor dlogits({tokens, n});
  for (size_t j = 0; j < n; ++j) {
    const auto& cache = caches[j];
    const size_t cnt = cache.rows.size();
    const size_t ffn = experts[j].w1.cols();
    if (cnt == 0) continue;

    Tensor de({cnt, hidden});
    for (size_t i = 0; i < cnt; ++i) {
      const size_t t = cache.rows[i];
      const double p = probs_cache.at(t, j);
      kern::active().scale(dy.data() + t * hidden, p, de.data() + i * hidden, hidden);
      double dp = 0.0;
      for (size_t c = 0; c < hidden; ++c) dp += dy.at(t, c) * cache.expert_out.at(i, c);
      for (size_t k = 0; k < n; ++k) {
        const double d = (k == j ? 1.0 : 0.0) - probs_cache.at(t, k);
        dlogits.at(t, k) += dp * p * d;
      }
    }

    Tensor xs = gather_rows(x_cache, cache.rows);
    matmul_tn_acc(grads[j].w2, cache.h1, de);
    for (size_t i = 0; i < cnt; ++i)
      kern::active().add(grads[j].b2.data(), de.data() + i * hidden, grads[j].b2.data(), hidden);
    Tensor dh1({cnt, ffn});
    matmul_nt_acc(dh1, de, experts[j].w2);
    Tensor dpre1 = gelu_backward(cache.pre1, dh1);
    matmul_tn_acc(grads[j].w1, xs, dpre1);
    for (size_t i = 0; i < cnt; ++i)
      kern::active().add(grads[j].b1.data(), dpre1.data() + i * ffn, grads[j].b1.data(), ffn);
    Tensor dxs({cnt, hidden});
    matmul_nt_acc(dxs, dpre1, experts[j].w1);
    for (size_t i = 0; i < cnt; ++i)
      kern::active().add(dx.data() + cache.rows[i] * hidden, dxs.data() + i * hidden,
                         dx.data() + cache.rows[i] * hidden, hidden);
  }

  matmul_nt_acc(dx, dlogits, gate);
  matmul_tn_acc(ggate, x_cache, dlogits);
  x_cache = Tensor();
  probs_cache = Tensor();
  sel_cache.clear();
  caches.clear();
  return dx;
}

void SerialMoe::zero_grads() {
  ggate.fill(0.0);
  for (auto& g : grads) {
    g.w1.fill(0.0);
    g.b1.fill(0.0);
    g.w2.fill(0.0);
    g.b2.fill(0.0);
  }
}

SerialModel::SerialModel(const ModelDims& dims, uint64_t seed) : dims_(dims) {
  if (dims.hidden % dims.heads != 0)
    throw ConfigError("hidden size " + std::to_string(dims.hidden) + " not divisible by " +
                      std::to_string(dims.heads) + " heads");
  SplitMix64 rng(seed);
  const double lo = -0.1, hi = 0.1;
  auto draw = [&](std::vector<size_t> shape) {
    CategoryScope param_scope(MemCategory::Param);
    return Tensor::uniform(std::move(shape), rng, lo, hi);
  };

  const size_t h = dims.hidden, f = dims.ffn, v = dims.vocab;
  embedding = SerialEmbedding(draw({v, h}));
  blocks.resize(dims.layers);
  for (auto& block : blocks) {
    block.attn = SerialAttention(draw({h, h}), draw({h, h}), draw({h, h}), draw({h, h}),
                                 dims.heads, dims.seq);
    if (dims.moe) {
      Tensor gate = draw({h, dims.n_experts});
      std::vector<ExpertParams> experts(dims.n_experts);
      for (auto& e : experts)
        e = ExpertParams{draw({h, f}), draw({f}), draw({f, h}), draw({h})};
      block.moe = std::make_unique<SerialMoe>(std::move(gate), std::move(experts));
    } else {
      block.ffn1 = SerialLinear(draw({h, f}), draw({f}));
      block.ffn2 = SerialLinear(draw({f, h}), draw({h}));
    }
  }
  head = SerialLinear(draw({h, v}), draw({v}));
}

Tensor SerialModel::forward(std::span<const int64_t> ids, Mode mode) {
  Tensor x = embedding.forward(ids, mode);
  for (auto& block : blocks) {
    Tensor x1 = add(x, block.attn.forward(x, mode));
    Tensor f;
    if (block.moe) {
      f = block.moe->forward(x1, mode);
    } else {
      Tensor pre = block.ffn1.forward(x1, mode);
      Tensor hgelu = gelu(pre);
      if (mode == Mode::Train) block.pre_cache = std::move(pre);
      f = block.ffn2.forward(hgelu, mode);
    }
    x = add(x1, f);
  }
  return head.forward(x, mode);
}

void SerialModel::backward(const Tensor& dlogits) {
  Tensor dx = head.backward(dlogits);
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    Block& block = *it;
    Tensor df;
    if (block.moe) {
      df = block.moe->backward(dx);
    } else {
      Tensor dh = block.ffn2.backward(dx);
      Tensor dpre = gelu_backward(block.pre_cache, dh);
      block.pre_cache = Tensor();
      df = block.ffn1.backward(dpre);
    }
    Tensor dx1 = add(dx, df);
    Tensor dattn = block.attn.backward(dx1);
    dx = add(dx1, dattn);
  }
  embedding.backward(dx);
}

void SerialModel::zero_grads() {
  embedding.zero_grads();
  for (auto& block : blocks) {
    block.attn.zero_grads();
    if (block.moe)
      block.moe->zero_grads();
    else {
      block.ffn1.zero_grads();
      block.ffn2.zero_grads();
    }
  }
  head.zero_grads();
}

size_t SerialModel::param_count() const {
  size_t count = embedding.table.numel();
  for (const auto& block : blocks) {
    count += block.attn.wq.numel() + block.attn.wk.numel() + block.attn.wv.numel() +
             block.attn.wo.numel();
    if (block.moe) {
      count += block.moe->gate.numel();
      for (const auto& e : block.moe->experts)
        count += e.w1.numel() + e.b1.numel() + e.w2.numel() + e.b2.numel();
    } else {
      count += block.ffn1.w.numel() + block.ffn1.b.numel() + block.ffn2.w.numel() +
               block.ffn2.b.numel();
    }
  }
  count += head.w.numel() + head.b.numel();
  return count;
}

}  // namespace rtp
