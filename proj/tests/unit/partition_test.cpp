#include <doctest.h>

#include "rtp/errors.hpp"
#include "rtp/partition.hpp"
#include "rtp/rng.hpp"

using namespace rtp;

namespace {

std::vector<std::pair<std::string, Tensor>> params_of_sizes(std::vector<size_t> sizes) {
  std::vector<std::pair<std::string, Tensor>> out;
  double v = 0;
  for (size_t i = 0; i < sizes.size(); ++i) {
    Tensor t({sizes[i]});
    for (size_t j = 0; j < sizes[i]; ++j) t.at(j) = v++;
    out.emplace_back("p" + std::to_string(i), std::move(t));
  }
  return out;
}

}  // namespace

TEST_CASE("flatten pads to a multiple of the shard count") {
  {
    FlatParameter fp = flatten(params_of_sizes({5, 3}), 4);
    CHECK(fp.flat.numel() == 8);
    CHECK(fp.pad_len == 0);
    CHECK(fp.shard_len() == 2);
  }
  {
    FlatParameter fp = flatten(params_of_sizes({5, 2}), 4);
    CHECK(fp.flat.numel() == 8);
    CHECK(fp.pad_len == 1);
    CHECK(fp.flat.at(7) == 0.0);  // tail padding is zero
  }
  CHECK_THROWS_AS(flatten(params_of_sizes({4}), 0), ConfigError);
}

TEST_CASE("a linear layer's weight and bias merge into one flat parameter") {
  SplitMix64 rng(2);
  Tensor w = Tensor::uniform({6, 4}, rng, -1, 1);
  Tensor b = Tensor::uniform({4}, rng, -1, 1);
  FlatParameter fp = flatten({{"w", w}, {"b", b}}, 2);
  CHECK(fp.segments.size() == 2);
  CHECK(fp.flat.numel() == 28);
  CHECK(fp.pad_len == 0);

  Tensor w2 = unflatten(fp, 0);
  Tensor b2 = unflatten(fp, 1);
  CHECK(w2.shape() == w.shape());
  for (size_t i = 0; i < w.numel(); ++i) CHECK(w2.at(i) == w.at(i));
  for (size_t i = 0; i < b.numel(); ++i) CHECK(b2.at(i) == b.at(i));
}

TEST_CASE("flatten then unflatten reconstructs every segment exactly") {
  SplitMix64 rng(9);
  for (int iter = 0; iter < 20; ++iter) {
    std::vector<std::pair<std::string, Tensor>> params;
    const size_t count = 1 + rng.next_index(4);
    for (size_t i = 0; i < count; ++i) {
      std::vector<size_t> shape;
      for (size_t d = 0; d < 1 + rng.next_index(2); ++d) shape.push_back(1 + rng.next_index(5));
      params.emplace_back("t" + std::to_string(i), Tensor::uniform(shape, rng, -1, 1));
    }
    const size_t n = 1 + rng.next_index(5);
    FlatParameter fp = flatten(params, n);
    CHECK(fp.flat.numel() % n == 0);
    CHECK(fp.pad_len < n);
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor back = unflatten(fp, i);
      CHECK(back.shape() == params[i].second.shape());
      for (size_t j = 0; j < back.numel(); ++j) CHECK(back.at(j) == params[i].second.at(j));
    }
  }
}

TEST_CASE("shard_view slices are disjoint and reassemble the flat buffer") {
  FlatParameter fp = flatten(params_of_sizes({8}), 4);
  {
    Tensor s2 = shard_view(fp, 2);
    CHECK(s2.numel() == 2);
    CHECK(s2.at(0) == 4.0);
    CHECK(s2.at(1) == 5.0);
  }
  {
    FlatParameter one = flatten(params_of_sizes({8}), 1);
    Tensor all = shard_view(one, 0);
    CHECK(all.numel() == 8);
    for (size_t i = 0; i < 8; ++i) CHECK(all.at(i) == fp.flat.at(i));
  }
  std::vector<double> reassembled;
  for (size_t r = 0; r < 4; ++r) {
    Tensor s = shard_view(fp, r);
    reassembled.insert(reassembled.end(), s.data(), s.data() + s.numel());
  }
  for (size_t i = 0; i < 8; ++i) CHECK(reassembled[i] == fp.flat.at(i));

  CHECK_THROWS_AS(shard_view(fp, 4), ConfigError);
}

TEST_CASE("linear layout owns contiguous column ranges") {
  ShardLayout l = layout_linear(3, 8, 4);
  CHECK(l.strategy == PartitionStrategy::OutputPartition);
  CHECK(l.ranges[1].begin == 2);
  CHECK(l.ranges[1].end == 4);

  ShardLayout single = layout_linear(3, 8, 1);
  CHECK(single.ranges[0].begin == 0);
  CHECK(single.ranges[0].end == 8);

  CHECK_THROWS_AS(layout_linear(3, 7, 2), ConfigError);
  try {
    layout_linear(3, 7, 2);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("multiple") != std::string::npos);  // remediation hint
  }
}

TEST_CASE("attention layout owns head groups") {
  {
    ShardLayout l = layout_attention(16, 4, 4);
    for (size_t j = 0; j < 4; ++j) {
      CHECK(l.ranges[j].begin == j);
      CHECK(l.ranges[j].end == j + 1);
    }
  }
  {
    ShardLayout l = layout_attention(16, 4, 2);
    CHECK(l.ranges[0].begin == 0);
    CHECK(l.ranges[0].end == 2);
    CHECK(l.ranges[1].begin == 2);
    CHECK(l.ranges[1].end == 4);
  }
  {
    ShardLayout l = layout_attention(16, 4, 1);
    CHECK(l.ranges[0].extent() == 4);
  }
  CHECK_THROWS_AS(layout_attention(16, 4, 8), ConfigError);
  CHECK_THROWS_AS(layout_attention(15, 4, 2), ConfigError);
}

TEST_CASE("moe layout pins one expert per shard") {
  ShardLayout l = layout_moe(4, 4);
  for (size_t j = 0; j < 4; ++j) {
    CHECK(l.ranges[j].begin == j);
    CHECK(l.ranges[j].end == j + 1);
  }
  CHECK(layout_moe(1, 1).ranges[0].extent() == 1);
  CHECK_THROWS_AS(layout_moe(2, 4), ConfigError);
}

TEST_CASE("every layout partitions its dimension") {
  for (auto [dim, n] : std::vector<std::pair<size_t, size_t>>{{8, 1}, {8, 2}, {8, 4}, {12, 3}}) {
    ShardLayout l = layout_linear(5, dim, n);
    size_t covered = 0;
    for (size_t j = 0; j < n; ++j) {
      covered += l.ranges[j].extent();
      if (j) CHECK(l.ranges[j].begin == l.ranges[j - 1].end);  // disjoint, adjacent
    }
    CHECK(covered == dim);
  }
}
