#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rtp/layers.hpp"
#include "rtp/serial.hpp"

namespace rtp {

// Sharded twin of a SerialModel: every layer RTP-wrapped, shards built from
// the serial parameter values, activations sharded on the batch dimension.
class RtpModel {
 public:
  RtpModel(const SerialModel& twin, WorkerGroup& group, RotationMode mode);

  // ids[r] holds worker r's tokens (local_batch * seq of them).
  std::vector<Tensor> forward(std::span<const std::vector<int64_t>> ids, Mode mode);
  // Returns nothing: gradients land in the traveling accumulators (and the
  // per-worker gate gradients for MoE blocks).
  void backward(std::span<const Tensor> dlogits);
  void zero_grads();

  // Out-of-place runs earmark one shard-sized comm buffer per layer per
  // worker for the whole step; they are all released right after the step's
  // final rotation, before the last sub-step's outputs are produced.
  void begin_step();
  // Fires inside backward at the release point (out-of-place only).
  std::function<void()> on_comm_release;
  bool comm_spares_active() const;

  size_t flat_param_bytes() const;  // padded flat totals (excludes replicated gates)
  size_t gate_bytes() const;        // per-worker replicated MoE gate bytes

  WorkerGroup& group() { return *group_; }
  RotationMode rotation_mode() const { return mode_; }

  struct Block {
    std::unique_ptr<RtpAttention> attn;
    std::unique_ptr<RtpLinear> ffn1, ffn2;
    std::unique_ptr<RtpMoe> moe;
    std::vector<Tensor> pre_cache;  // per worker, ffn1 output for gelu backward
  };

  RtpEmbedding& embedding() { return *embedding_; }
  std::vector<Block>& rtp_blocks() { return blocks_; }
  RtpLinear& head() { return *head_; }
  std::vector<RtpLayerBase*> all_layers();

 private:
  void for_each_layer(const std::function<void(RtpLayerBase&)>& fn);

  WorkerGroup* group_;
  RotationMode mode_;
  ModelDims dims_;
  std::unique_ptr<RtpEmbedding> embedding_;
  std::vector<Block> blocks_;
  std::unique_ptr<RtpLinear> head_;
};

// Deterministic batch fixture: token ids and an MSE target, both drawn from
// the seed's stream (independent of the parameter stream).
struct BatchFixture {
  size_t batch = 0, seq = 0, vocab = 0;
  std::vector<int64_t> ids;  // batch*seq
  Tensor target;             // (batch*seq) x vocab
};
BatchFixture make_batch_fixture(const ModelDims& dims, size_t batch, uint64_t seed);

// Batch-major sharding: worker r gets rows [r*batch/n, (r+1)*batch/n).
std::vector<std::vector<int64_t>> shard_ids(const BatchFixture& fx, size_t n);
std::vector<Tensor> shard_rows(const Tensor& t, size_t batch, size_t n);

}  // namespace rtp
