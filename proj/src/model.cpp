#include "rtp/model.hpp"

#include "rtp/errors.hpp"

namespace rtp {

RtpModel::RtpModel(const SerialModel& twin, WorkerGroup& group, RotationMode mode)
    : group_(&group), mode_(mode), dims_(twin.dims()) {
  const size_t n = group.size();
  if (dims_.moe && dims_.n_experts != n)
    throw ConfigError("MoE twin built for " + std::to_string(dims_.n_experts) +
                      " experts cannot shard across " + std::to_string(n) + " workers");

  embedding_ = std::make_unique<RtpEmbedding>(group, "embedding", twin.embedding.table, n);
  blocks_.resize(twin.blocks.size());
  for (size_t l = 0; l < twin.blocks.size(); ++l) {
    const auto& sb = twin.blocks[l];
    auto& b = blocks_[l];
    const std::string tag = "block" + std::to_string(l);
    b.attn = std::make_unique<RtpAttention>(group, tag + "/attn", sb.attn.wq, sb.attn.wk,
                                            sb.attn.wv, sb.attn.wo, dims_.heads, dims_.seq, n);
    if (sb.moe) {
      b.moe = std::make_unique<RtpMoe>(group, tag + "/moe", sb.moe->gate, sb.moe->experts, n);
    } else {
      b.ffn1 = std::make_unique<RtpLinear>(group, tag + "/ffn1", sb.ffn1.w, sb.ffn1.b, n);
      b.ffn2 = std::make_unique<RtpLinear>(group, tag + "/ffn2", sb.ffn2.w, sb.ffn2.b, n);
    }
    b.pre_cache.resize(n);
  }
  head_ = std::make_unique<RtpLinear>(group, "head", twin.head.w, twin.head.b, n);
  for_each_layer([&](RtpLayerBase& l) { l.set_rotation_mode(mode); });
}

void RtpModel::for_each_layer(const std::function<void(RtpLayerBase&)>& fn) {
  fn(*embedding_);
  for (auto& b : blocks_) {
    fn(*b.attn);
    if (b.moe)
      fn(*b.moe);
    else {
      fn(*b.ffn1);
      fn(*b.ffn2);
    }
  }
  fn(*head_);
}

std::vector<RtpLayerBase*> RtpModel::all_layers() {
  std::vector<RtpLayerBase*> out;
  for_each_layer([&](RtpLayerBase& l) { out.push_back(&l); });
  return out;
}

void RtpModel::begin_step() {
  if (mode_ == RotationMode::OutOfPlace)
    for_each_layer([](RtpLayerBase& l) { l.allocate_comm_spares(); });
}

bool RtpModel::comm_spares_active() const {
  bool active = false;
  const_cast<RtpModel*>(this)->for_each_layer(
      [&](RtpLayerBase& l) { active = active || l.has_comm_spares(); });
  return active;
}

std::vector<Tensor> RtpModel::forward(std::span<const std::vector<int64_t>> ids, Mode mode) {
  std::vector<Tensor> x = embedding_->forward(ids, mode);
  const size_t n = group_->size();
  for (auto& b : blocks_) {
    std::vector<Tensor> attn_out = b.attn->forward(x, mode);
    std::vector<Tensor> x1(n);
    group_->each([&](size_t r) { x1[r] = add(x[r], attn_out[r]); });
    std::vector<Tensor> f;
    if (b.moe) {
      f = b.moe->forward(x1, mode);
    } else {
      std::vector<Tensor> pre = b.ffn1->forward(x1, mode);
      std::vector<Tensor> h(n);
      group_->each([&](size_t r) {
        h[r] = gelu(pre[r]);
        if (mode == Mode::Train) b.pre_cache[r] = std::move(pre[r]);
      });
      f = b.ffn2->forward(h, mode);
    }
    group_->each([&](size_t r) { x[r] = add(x1[r], f[r]); });
  }
  return head_->forward(x, mode);
}

void RtpModel::backward(std::span<const Tensor> dlogits) {
  const size_t n = group_->size();
  std::vector<Tensor> dx = head_->backward(dlogits);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    Block& b = *it;
    std::vector<Tensor> df;
    if (b.moe) {
      df = b.moe->backward(dx);
    } else {
      std::vector<Tensor> dh = b.ffn2->backward(dx);
      std::vector<Tensor> dpre(n);
      group_->each([&](size_t r) {
        dpre[r] = gelu_backward(b.pre_cache[r], dh[r]);
        b.pre_cache[r] = Tensor();
      });
      df = b.ffn1->backward(dpre);
    }
    std::vector<Tensor> dx1(n);
    group_->each([&](size_t r) { dx1[r] = add(dx[r], df[r]); });
    std::vector<Tensor> dattn = b.attn->backward(dx1);
    group_->each([&](size_t r) { dx[r] = add(dx1[r], dattn[r]); });
  }

  std::function<void()> release_hook;
  if (mode_ == RotationMode::OutOfPlace) {
    release_hook = [this] {
      for_each_layer([](RtpLayerBase& l) { l.release_comm_spares(); });
      if (on_comm_release) on_comm_release();
    };
  }
  embedding_->backward(dx, release_hook);
}

void RtpModel::zero_grads() {
  for_each_layer([](RtpLayerBase& l) { l.zero_grads(); });
}

size_t RtpModel::flat_param_bytes() const {
  size_t bytes = 0;
  const_cast<RtpModel*>(this)->for_each_layer(
      [&](RtpLayerBase& l) { bytes += l.flat_param_bytes(); });
  return bytes;
}

size_t RtpModel::gate_bytes() const {
  size_t bytes = 0;
  for (const auto& b : blocks_)
    if (b.moe) bytes += b.moe->gate_bytes();
  return bytes;
}

BatchFixture make_batch_fixture(const ModelDims& dims, size_t batch, uint64_t seed) {
  // Offset keeps the fixture stream distinct from the parameter stream.
  SplitMix64 rng(seed ^ 0xA5A5A5A5A5A5A5A5ULL);
  BatchFixture fx;
  fx.batch = batch;
  fx.seq = dims.seq;
  fx.vocab = dims.vocab;
  fx.ids.resize(batch * dims.seq);
  for (auto& id : fx.ids) id = static_cast<int64_t>(rng.next_index(dims.vocab));
  fx.target = Tensor::uniform({batch * dims.seq, dims.vocab}, rng, -0.1, 0.1);
  return fx;
}

std::vector<std::vector<int64_t>> shard_ids(const BatchFixture& fx, size_t n) {
  if (fx.batch % n != 0)
    throw ConfigError("batch " + std::to_string(fx.batch) + " not divisible by " +
                      std::to_string(n) + " workers");
  const size_t per = fx.batch / n * fx.seq;
  std::vector<std::vector<int64_t>> out(n);
  for (size_t r = 0; r < n; ++r)
    out[r].assign(fx.ids.begin() + r * per, fx.ids.begin() + (r + 1) * per);
  return out;
}

std::vector<Tensor> shard_rows(const Tensor& t, size_t batch, size_t n) {
  if (batch % n != 0)
    throw ConfigError("batch " + std::to_string(batch) + " not divisible by " +
                      std::to_string(n) + " workers");
  const size_t rows = t.rows();
  const size_t per = rows / n;
  std::vector<Tensor> out(n);
  for (size_t r = 0; r < n; ++r) {
    Tensor part({per, t.cols()});
    std::copy(t.data() + r * per * t.cols(), t.data() + (r + 1) * per * t.cols(), part.data());
    out[r] = std::move(part);
  }
  return out;
}

}  // namespace rtp
