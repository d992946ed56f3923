#include "rtp/partition.hpp"

#include <algorithm>

#include "rtp/errors.hpp"

namespace rtp {

size_t Segment::numel() const {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

FlatParameter flatten(const std::vector<std::pair<std::string, Tensor>>& params, size_t n) {
  if (n == 0) throw ConfigError("flatten: shard count must be >= 1");
  size_t total = 0;
  std::vector<Segment> segments;
  segments.reserve(params.size());
  for (const auto& [name, t] : params) {
    segments.push_back({name, t.shape(), total});
    total += t.numel();
  }
  const size_t pad = (n - total % n) % n;

  std::vector<double> flat_data;
  flat_data.reserve(total + pad);
  for (const auto& [name, t] : params)
    flat_data.insert(flat_data.end(), t.data(), t.data() + t.numel());
  flat_data.resize(total + pad, 0.0);

  FlatParameter fp;
  fp.flat = Tensor({total + pad}, std::move(flat_data));
  fp.segments = std::move(segments);
  fp.pad_len = pad;
  fp.n_shards = n;
  return fp;
}

Tensor unflatten(const FlatParameter& fp, size_t seg_idx) {
  if (seg_idx >= fp.segments.size())
    throw IndexError("unflatten: segment " + std::to_string(seg_idx) + " of " +
                     std::to_string(fp.segments.size()));
  const Segment& seg = fp.segments[seg_idx];
  std::vector<double> data(fp.flat.data() + seg.offset, fp.flat.data() + seg.offset + seg.numel());
  return Tensor(seg.shape, std::move(data));
}

Tensor shard_view(const FlatParameter& fp, size_t rank) {
  if (rank >= fp.n_shards)
    throw ConfigError("shard_view: rank " + std::to_string(rank) + " out of range for " +
                      std::to_string(fp.n_shards) + " shards");
  const size_t len = fp.shard_len();
  std::vector<double> data(fp.flat.data() + rank * len, fp.flat.data() + (rank + 1) * len);
  return Tensor({len}, std::move(data));
}

ShardLayout layout_linear(size_t in_dim, size_t out_dim, size_t n) {
  if (n == 0) throw ConfigError("layout_linear: shard count must be >= 1");
  if (in_dim == 0 || out_dim == 0) throw ConfigError("layout_linear: dimensions must be positive");
  if (out_dim % n != 0)
    throw ConfigError("layout_linear: out_dim " + std::to_string(out_dim) +
                      " not divisible by " + std::to_string(n) +
                      " shards; choose out_dim as a multiple of the worker count");
  ShardLayout l{PartitionStrategy::OutputPartition, n, {}};
  const size_t per = out_dim / n;
  for (size_t j = 0; j < n; ++j) l.ranges.push_back({j * per, (j + 1) * per});
  return l;
}

ShardLayout layout_attention(size_t hidden, size_t heads, size_t n) {
  if (n == 0) throw ConfigError("layout_attention: shard count must be >= 1");
  if (heads == 0 || hidden % heads != 0)
    throw ConfigError("layout_attention: hidden " + std::to_string(hidden) +
                      " not divisible by " + std::to_string(heads) + " heads");
  if (heads % n != 0)
    throw ConfigError("layout_attention: " + std::to_string(heads) +
                      " heads not divisible by " + std::to_string(n) +
                      " shards; choose a head count that is a multiple of the worker count");
  ShardLayout l{PartitionStrategy::HeadPartition, n, {}};
  const size_t per = heads / n;
  for (size_t j = 0; j < n; ++j) l.ranges.push_back({j * per, (j + 1) * per});
  return l;
}

ShardLayout layout_moe(size_t n_experts, size_t n) {
  if (n == 0) throw ConfigError("layout_moe: shard count must be >= 1");
  if (n_experts != n)
    throw ConfigError("layout_moe: " + std::to_string(n_experts) + " experts for " +
                      std::to_string(n) +
                      " shards; expert count must equal the worker count (one expert per shard)");
  ShardLayout l{PartitionStrategy::ExpertPartition, n, {}};
  for (size_t j = 0; j < n; ++j) l.ranges.push_back({j, j + 1});
  return l;
}

}  // namespace rtp
