#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rtp/tensor.hpp"

namespace rtp {

// One original parameter inside a FlatParameter.
struct Segment {
  std::string name;
  std::vector<size_t> shape;
  size_t offset = 0;  // element offset into flat
  size_t numel() const;
};

// Padded 1-D concatenation of a layer's parameters, divisible into n_shards
// equal contiguous shards. Padding (zeros) sits at the tail.
struct FlatParameter {
  Tensor flat;  // 1-D
  std::vector<Segment> segments;
  size_t pad_len = 0;
  size_t n_shards = 1;

  size_t shard_len() const { return flat.numel() / n_shards; }
};

// Concatenates the given parameters in order and pads so the total length is
// divisible by n. Reconstruction via unflatten is exact.
FlatParameter flatten(const std::vector<std::pair<std::string, Tensor>>& params, size_t n);

// Reconstructs segment seg_idx with its original shape.
Tensor unflatten(const FlatParameter& fp, size_t seg_idx);

// Contiguous shard [rank·len/N, (rank+1)·len/N) as an owned 1-D tensor.
Tensor shard_view(const FlatParameter& fp, size_t rank);

enum class PartitionStrategy { OutputPartition, HeadPartition, ExpertPartition };

// Half-open index range owned by one logical shard: columns for
// OutputPartition, heads for HeadPartition, expert index for ExpertPartition.
struct ShardRange {
  size_t begin = 0;
  size_t end = 0;
  size_t extent() const { return end - begin; }
};

// Shard-layout descriptor. Logical shard ids run 0..n_shards-1 in canonical
// order; ranges are disjoint and cover the whole partitioned dimension.
struct ShardLayout {
  PartitionStrategy strategy;
  size_t n_shards = 1;
  std::vector<ShardRange> ranges;
};

// Columns of the weight (output features) plus the matching bias slice.
ShardLayout layout_linear(size_t in_dim, size_t out_dim, size_t n);

// Q/K/V projections split by head group; the output projection owns the
// matching row block.
ShardLayout layout_attention(size_t hidden, size_t heads, size_t n);

// One expert per shard; requires n_experts == n.
ShardLayout layout_moe(size_t n_experts, size_t n);

}  // namespace rtp
