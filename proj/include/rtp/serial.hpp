#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "rtp/layers.hpp"
#include "rtp/tensor.hpp"

namespace rtp {

// Single-worker reference implementation. Same kernels, same parameter
// draws, no sharding, no rotation: defines numerical ground truth and the
// memory-duplication baseline.

struct SerialLinear {
  SerialLinear() = default;
  SerialLinear(Tensor weight, Tensor bias);
  Tensor w, b;
  Tensor gw, gb;
  Tensor x_cache;

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void zero_grads();
};

struct SerialEmbedding {
  SerialEmbedding() = default;
  explicit SerialEmbedding(Tensor table);
  Tensor table;
  Tensor gtable;
  std::vector<int64_t> ids_cache;

  Tensor forward(std::span<const int64_t> ids, Mode mode);
  void backward(const Tensor& dy);
  void zero_grads();
};

struct SerialAttention {
  SerialAttention() = default;
  SerialAttention(Tensor wq, Tensor wk, Tensor wv, Tensor wo, size_t heads, size_t seq);
  Tensor wq, wk, wv, wo;
  Tensor gq, gk, gv, go;
  size_t heads = 1, seq = 1, head_dim = 1;
  Tensor x_cache, q_cache, k_cache, v_cache, probs_cache, attn_cache;

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void zero_grads();
};

struct SerialMoe {
  SerialMoe() = default;
  SerialMoe(Tensor gate, std::vector<ExpertParams> experts);
  Tensor gate;
  Tensor ggate;
  std::vector<ExpertParams> experts;
  std::vector<ExpertParams> grads;
  Tensor x_cache, probs_cache;
  std::vector<size_t> sel_cache;
  struct ExpertCache {
    std::vector<size_t> rows;
    Tensor pre1, h1, expert_out;
  };
  std::vector<ExpertCache> caches;

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void zero_grads();
};

struct ModelDims {
  size_t heads = 4;
  size_t hidden = 32;
  size_t layers = 2;
  size_t seq = 16;
  size_t vocab = 64;
  size_t ffn = 128;  // feed-forward inner width
  bool moe = false;
  size_t n_experts = 1;  // MoE variant: equals the worker count
};

// Embedding -> layers x (attention + FFN-or-MoE, residual connections) ->
// linear head. Parameters drawn from one splitmix64 stream in a fixed,
// documented order so sharded twins see identical values.
class SerialModel {
 public:
  SerialModel(const ModelDims& dims, uint64_t seed);

  // ids.size() must be a multiple of seq; returns (tokens x vocab) logits.
  Tensor forward(std::span<const int64_t> ids, Mode mode);
  void backward(const Tensor& dlogits);
  void zero_grads();

  const ModelDims& dims() const { return dims_; }
  size_t param_count() const;
  size_t param_bytes() const { return param_count() * sizeof(double); }

  struct Block {
    SerialAttention attn;
    SerialLinear ffn1, ffn2;
    std::unique_ptr<SerialMoe> moe;
    Tensor pre_cache;  // ffn1 output, for the gelu backward
  };

  SerialEmbedding embedding;
  std::vector<Block> blocks;
  SerialLinear head;

 private:
  ModelDims dims_;
};

}  // namespace rtp
