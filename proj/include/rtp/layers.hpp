#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rtp/errors.hpp"
#include "rtp/partition.hpp"
#include "rtp/ring.hpp"
#include "rtp/tensor.hpp"

namespace rtp {

enum class Mode { Train, Eval };
enum class RotationMode { InPlace, OutOfPlace };

// Per-worker replay tape: one entry per forward step records the logical
// shard id used and whatever that step's backward needs. Backward pops
// entries in reverse and asserts the resident shard matches the recording —
// the forward/backward pairing over the same rotated storage.
template <typename Saved>
class ReplayTape {
 public:
  void record(size_t logical_id, Saved saved) {
    entries_.push_back(Entry{logical_id, std::move(saved)});
  }

  Saved replay(size_t resident_id) {
    if (entries_.empty()) throw StateError("backward invoked without a matching forward");
    Entry& e = entries_.back();
    if (e.logical_id != resident_id)
      throw ProtocolError("shard identity mismatch on replay: resident shard " +
                          std::to_string(resident_id) + ", tape recorded " +
                          std::to_string(e.logical_id));
    Saved saved = std::move(e.saved);
    entries_.pop_back();
    return saved;
  }

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    size_t logical_id;
    Saved saved;
  };
  std::vector<Entry> entries_;
};

// Equal-sized per-shard parameter groups; flattening them in shard order
// aligns shard boundaries with group boundaries.
using ParamGroup = std::vector<std::pair<std::string, Tensor>>;

ParamGroup flatten_group_list(const std::vector<ParamGroup>& groups);
// flatten() over the concatenated groups; asserts every shard boundary
// coincides with a group boundary.
FlatParameter flatten_shards(const std::vector<ParamGroup>& groups);

std::vector<ParamGroup> linear_shard_groups(const Tensor& w, const Tensor& b, size_t n);
std::vector<ParamGroup> embedding_shard_groups(const Tensor& table, size_t n);
std::vector<ParamGroup> attention_shard_groups(const Tensor& wq, const Tensor& wk,
                                               const Tensor& wv, const Tensor& wo, size_t heads,
                                               size_t n);
struct ExpertParams {
  Tensor w1, b1, w2, b2;
};
std::vector<ParamGroup> moe_shard_groups(std::span<const ExpertParams> experts, size_t n);

// Common state for one rotated layer across the whole group: N slots, N
// tapes, optional per-worker comm spares for out-of-place rotation.
class RtpLayerBase {
 public:
  RtpLayerBase(WorkerGroup& group, std::string label);
  virtual ~RtpLayerBase() = default;

  const std::string& label() const { return label_; }
  size_t n() const { return group_->size(); }
  std::span<ShardSlot> slots() { return slots_; }
  std::span<const ShardSlot> slots() const { return slots_; }
  size_t shard_len() const { return shard_len_; }
  size_t flat_param_bytes() const { return shard_len_ * n() * sizeof(double); }

  virtual void zero_grads();
  // logical_id == rank for every worker.
  bool all_home() const;

  // Out-of-place support: shard-sized CommBuffer spares per worker.
  void allocate_comm_spares();
  void release_comm_spares();
  bool has_comm_spares() const { return !spares_.empty(); }

 protected:
  // Builds slots from equal-sized shard groups (weights copied per worker
  // under MemCategory::Param, gradient accumulators under MemCategory::Grad).
  void init_slots(const std::vector<ParamGroup>& groups);
  void require_home(const char* op) const;
  // Position-law checks: forward step s must see shard (rank - s) mod N,
  // backward step s' must see shard (rank + 1 + s') mod N.
  void check_forward_position(size_t rank, size_t step) const;
  void check_backward_position(size_t rank, size_t step) const;
  void rotate_forward();   // clockwise, weight payload
  void rotate_backward();  // counter-clockwise, weight+grad payload
  // Eval-mode forward ends displaced by N-1 clockwise hops; one more hop
  // re-homes every slot.
  void rehome_after_eval();

  WorkerGroup* group_;
  std::string label_;
  std::vector<ShardSlot> slots_;
  std::vector<Tensor> spares_;
  std::vector<Segment> segments_;  // whole-flat segment table (metadata only)
  size_t shard_len_ = 0;
  RotationMode rotation_mode_ = RotationMode::InPlace;

 public:
  void set_rotation_mode(RotationMode m) { rotation_mode_ = m; }
};

// Linear layer sharded on output features. Forward assembles column blocks
// in canonical order; backward accumulates the traveling gradient and
// returns dX.
class RtpLinear : public RtpLayerBase {
 public:
  RtpLinear(WorkerGroup& group, std::string label, const Tensor& weight, const Tensor& bias,
            size_t n);

  size_t in_dim() const { return in_; }
  size_t out_dim() const { return out_; }
  const ShardLayout& layout() const { return layout_; }

  // x[r]: rows x in_dim; returns rows x out_dim per worker.
  std::vector<Tensor> forward(std::span<const Tensor> x, Mode mode);
  std::vector<Tensor> backward(std::span<const Tensor> dy);

 private:
  size_t in_, out_, per_;  // per_ = out_dim / n
  ShardLayout layout_;
  std::vector<ReplayTape<std::monostate>> tapes_;
  std::vector<Tensor> x_cache_;
};

// Embedding sharded on the embedding dimension; same rotation schedule.
class RtpEmbedding : public RtpLayerBase {
 public:
  RtpEmbedding(WorkerGroup& group, std::string label, const Tensor& table, size_t n);

  size_t vocab() const { return vocab_; }
  size_t emb_dim() const { return emb_; }

  std::vector<Tensor> forward(std::span<const std::vector<int64_t>> ids, Mode mode);
  // No input gradient; scatter-adds into the traveling accumulator. The
  // optional hook fires after this layer's last rotation, before the final
  // sub-step runs (used to model comm-buffer recycling).
  void backward(std::span<const Tensor> dy, const std::function<void()>& after_last_rotation = {});

 private:
  size_t vocab_, emb_, per_;
  ShardLayout layout_;
  std::vector<ReplayTape<std::monostate>> tapes_;
  std::vector<std::vector<int64_t>> ids_cache_;
};

// Multi-head attention sharded by head group; per-shard partial outputs are
// summed as they are produced. Q/K/V projections are column-parallel, the
// output projection row-parallel; projections carry no bias.
class RtpAttention : public RtpLayerBase {
 public:
  RtpAttention(WorkerGroup& group, std::string label, const Tensor& wq, const Tensor& wk,
               const Tensor& wv, const Tensor& wo, size_t heads, size_t seq, size_t n);

  // x[r]: (batch_r * seq) x hidden; returns the same shape.
  std::vector<Tensor> forward(std::span<const Tensor> x, Mode mode);
  std::vector<Tensor> backward(std::span<const Tensor> dy);

 private:
  struct Saved {
    Tensor q, k, v;      // rows x group_width
    Tensor probs;        // (batch * group_heads * seq) x seq
    Tensor attn_out;     // rows x group_width
  };
  size_t hidden_, heads_, seq_, head_dim_, group_heads_, group_width_;
  ShardLayout layout_;
  std::vector<ReplayTape<Saved>> tapes_;
  std::vector<Tensor> x_cache_;
};

// Mixture-of-experts block: one two-layer GeLU expert per shard, top-1
// gating with replicated gate weights. Tokens meet every expert exactly once
// as experts rotate past the sharded batch; no all-to-all is involved.
class RtpMoe : public RtpLayerBase {
 public:
  RtpMoe(WorkerGroup& group, std::string label, const Tensor& gate,
         std::span<const ExpertParams> experts, size_t n);

  size_t hidden() const { return hidden_; }
  size_t ffn_dim() const { return ffn_; }
  size_t n_experts() const { return n(); }
  size_t gate_bytes() const { return hidden_ * n() * sizeof(double); }

  std::vector<Tensor> forward(std::span<const Tensor> x, Mode mode);
  std::vector<Tensor> backward(std::span<const Tensor> dy);

  // Per-worker gate gradient over the local batch shard; replicated-weight
  // gradients are combined by the caller (data-parallel semantics).
  const Tensor& gate_grad(size_t rank) const { return gate_grads_[rank]; }
  const Tensor& gate_weight(size_t rank) const { return gates_[rank]; }
  Tensor& gate_weight_mut(size_t rank) { return gates_[rank]; }

  void zero_grads() override;

 private:
  struct Saved {
    std::vector<size_t> rows;  // token rows routed to this expert
    Tensor pre1, h1;           // rows' pre-activation and hidden
    Tensor expert_out;         // rows' unscaled expert output
  };
  size_t hidden_, ffn_;
  ShardLayout layout_;
  std::vector<Tensor> gates_;       // replicated per worker (Param)
  std::vector<Tensor> gate_grads_;  // per worker (Grad)
  std::vector<ReplayTape<Saved>> tapes_;
  std::vector<Tensor> x_cache_;
  std::vector<Tensor> probs_cache_;
  std::vector<std::vector<size_t>> sel_cache_;
};

// Top-1 selection with ties broken toward the lower expert index.
size_t argmax_row(const double* row, size_t n);

}  // namespace rtp
