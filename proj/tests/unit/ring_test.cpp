#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "rtp/errors.hpp"
#include "rtp/ring.hpp"
#include "rtp/rng.hpp"

using namespace rtp;

namespace {

// Slots whose payload value identifies the logical shard.
std::vector<ShardSlot> make_slots(size_t n, size_t len = 2) {
  std::vector<ShardSlot> slots(n);
  for (size_t r = 0; r < n; ++r) {
    slots[r].weight = Tensor({len});
    for (size_t i = 0; i < len; ++i) slots[r].weight.at(i) = double(r * 100 + i);
    slots[r].grad_acc = Tensor({len});
    slots[r].grad_acc.fill(double(r));
    slots[r].logical_id = r;
  }
  return slots;
}

size_t payload_id(const ShardSlot& s) { return size_t(s.weight.at(0)) / 100; }

double group_checksum(const std::vector<ShardSlot>& slots) {
  double sum = 0;
  for (const auto& s : slots)
    for (size_t i = 0; i < s.weight.numel(); ++i) sum += s.weight.at(i) * double(i + 1);
  return sum;
}

}  // namespace

TEST_CASE("clockwise rotation across 4 workers") {
  WorkerGroup g(4, TransportKind::Lockstep);
  auto slots = make_slots(4);
  g.rotate_clockwise(slots);
  for (size_t r = 0; r < 4; ++r) {
    CHECK(payload_id(slots[r]) == (r + 3) % 4);
    CHECK(slots[r].logical_id == (r + 3) % 4);
    CHECK(slots[r].rotation_offset == 1);
  }
}

TEST_CASE("single worker rotation is a no-op") {
  WorkerGroup g(1, TransportKind::Lockstep);
  auto slots = make_slots(1);
  g.rotate_clockwise(slots);
  g.rotate_counterclockwise(slots);
  CHECK(payload_id(slots[0]) == 0);
  CHECK(g.traffic().empty());
}

TEST_CASE("n-1 clockwise rotations leave each worker holding its successor's shard") {
  WorkerGroup g(4, TransportKind::Lockstep);
  auto slots = make_slots(4);
  for (int s = 0; s < 3; ++s) g.rotate_clockwise(slots);
  for (size_t r = 0; r < 4; ++r) CHECK(slots[r].logical_id == (r + 1) % 4);
}

TEST_CASE("clockwise then counter-clockwise is the identity placement") {
  WorkerGroup g(4, TransportKind::Lockstep);
  auto slots = make_slots(4);
  g.rotate_clockwise(slots, PayloadKind::WeightAndGrad);
  g.rotate_counterclockwise(slots, PayloadKind::WeightAndGrad);
  for (size_t r = 0; r < 4; ++r) {
    CHECK(slots[r].logical_id == r);
    CHECK(payload_id(slots[r]) == r);
    CHECK(slots[r].grad_acc.at(0) == double(r));
    CHECK(slots[r].rotation_offset == 0);
  }
}

TEST_CASE("with two workers both directions coincide with a swap") {
  WorkerGroup g(2, TransportKind::Lockstep);
  auto slots = make_slots(2);
  g.rotate_clockwise(slots);
  CHECK(payload_id(slots[0]) == 1);
  CHECK(payload_id(slots[1]) == 0);
  g.rotate_counterclockwise(slots, PayloadKind::Weight);
  CHECK(payload_id(slots[0]) == 0);
  CHECK(payload_id(slots[1]) == 1);
}

TEST_CASE("backward rotation carries weight and gradient together") {
  WorkerGroup g(3, TransportKind::Lockstep);
  auto slots = make_slots(3);
  g.rotate_counterclockwise(slots);  // default WeightAndGrad
  for (size_t r = 0; r < 3; ++r) {
    CHECK(slots[r].logical_id == (r + 1) % 3);
    CHECK(slots[r].grad_acc.at(0) == double((r + 1) % 3));
  }
}

TEST_CASE("position, permutation and volume laws under random sequences") {
  SplitMix64 rng(77);
  for (size_t n : {1u, 2u, 3u, 4u, 8u}) {
    WorkerGroup g(n, TransportKind::Lockstep);
    const size_t len = 6;
    auto slots = make_slots(n, len);
    const double checksum = group_checksum(slots);
    long net = 0;
    size_t steps = 0;
    for (int iter = 0; iter < 200; ++iter) {
      if (rng.next_index(2) == 0) {
        g.rotate_clockwise(slots, PayloadKind::WeightAndGrad);
        ++net;
      } else {
        g.rotate_counterclockwise(slots, PayloadKind::WeightAndGrad);
        --net;
      }
      ++steps;
      if (iter % 37 == 0) {
        for (size_t r = 0; r < n; ++r) {
          const size_t expected = (r + n - (net % long(n) + n) % n) % n;
          CHECK(slots[r].logical_id == expected);
          if (n > 1) CHECK(slots[r].rotation_offset == net);
        }
        CHECK(group_checksum(slots) == checksum);  // contents permuted, never mutated
      }
    }
    // volume: every step moved one shard per worker
    size_t elems = 0;
    for (const auto& rec : g.traffic()) elems += rec.weight_elems_per_worker;
    CHECK(elems == (n == 1 ? 0 : steps * len));
  }
}

TEST_CASE("a full pass moves the same volume as a ring allgather") {
  const size_t n = 4, shard_len = 8;
  WorkerGroup g(n, TransportKind::Lockstep);
  auto slots = make_slots(n, shard_len);
  for (size_t s = 0; s + 1 < n; ++s) g.rotate_clockwise(slots, PayloadKind::Weight, "pass");

  size_t rotation_elems = 0;
  for (const auto& rec : g.traffic())
    if (rec.label == "pass") rotation_elems += rec.weight_elems_per_worker;
  CHECK(rotation_elems == (n - 1) * shard_len);

  std::vector<Tensor> shards;
  for (size_t r = 0; r < n; ++r) {
    Tensor t({shard_len});
    t.fill(double(r));
    shards.push_back(std::move(t));
  }
  g.clear_traffic();
  auto gathered = g.ring_allgather(shards, "ag");
  size_t ag_elems = 0;
  for (const auto& rec : g.traffic()) ag_elems += rec.weight_elems_per_worker;
  CHECK(ag_elems == (n - 1) * shard_len);
  CHECK(ag_elems == rotation_elems);

  // gathered equals canonical concatenation on every worker
  for (size_t r = 0; r < n; ++r) {
    CHECK(gathered[r].numel() == n * shard_len);
    for (size_t j = 0; j < n; ++j)
      for (size_t i = 0; i < shard_len; ++i) CHECK(gathered[r].at(j * shard_len + i) == double(j));
  }

  WorkerGroup g1(1, TransportKind::Lockstep);
  auto one = g1.ring_allgather(std::vector<Tensor>{shards[0]});
  CHECK(one[0].numel() == shard_len);
}

TEST_CASE("out-of-place rotation matches in-place placement and uses the spare") {
  const size_t n = 4, len = 4;
  WorkerGroup a(n, TransportKind::Lockstep), b(n, TransportKind::Lockstep);
  auto in_place = make_slots(n, len);
  auto out_place = make_slots(n, len);

  MemoryLedger ledgers[4];
  std::vector<MemoryLedger*> lp{&ledgers[0], &ledgers[1], &ledgers[2], &ledgers[3]};
  b.bind_ledgers(lp);

  std::vector<Tensor> spares(n);
  b.each([&](size_t r) {
    CategoryScope comm(MemCategory::CommBuffer);
    spares[r] = Tensor({len});
  });
  for (size_t r = 0; r < n; ++r)
    CHECK(ledgers[r].current(MemCategory::CommBuffer) == len * sizeof(double));

  a.rotate_clockwise(in_place);
  b.rotate_outofplace(out_place, spares, Direction::Clockwise);
  for (size_t r = 0; r < n; ++r) {
    CHECK(out_place[r].logical_id == in_place[r].logical_id);
    for (size_t i = 0; i < len; ++i) CHECK(out_place[r].weight.at(i) == in_place[r].weight.at(i));
  }

  Tensor wrong({len + 1});
  std::vector<Tensor> bad(n, wrong);
  CHECK_THROWS_AS(b.rotate_outofplace(out_place, bad, Direction::Clockwise), DimensionError);
}

TEST_CASE("corrupted step tags are detected") {
  for (TransportKind kind : {TransportKind::Lockstep, TransportKind::Concurrent}) {
    WorkerGroup g(4, kind);
    auto slots = make_slots(4);
    g.corrupt_next_exchange(2, WorkerGroup::Corrupt::Tag);
    CHECK_THROWS_AS(g.rotate_clockwise(slots), ProtocolError);
  }
}

TEST_CASE("concurrent transport produces the lockstep result") {
  for (size_t n : {2u, 3u, 4u, 8u}) {
    WorkerGroup lock(n, TransportKind::Lockstep);
    WorkerGroup conc(n, TransportKind::Concurrent);
    auto a = make_slots(n, 5);
    auto b = make_slots(n, 5);
    SplitMix64 rng(n);
    for (int iter = 0; iter < 50; ++iter) {
      if (rng.next_index(2) == 0) {
        lock.rotate_clockwise(a, PayloadKind::WeightAndGrad);
        conc.rotate_clockwise(b, PayloadKind::WeightAndGrad);
      } else {
        lock.rotate_counterclockwise(a, PayloadKind::WeightAndGrad);
        conc.rotate_counterclockwise(b, PayloadKind::WeightAndGrad);
      }
    }
    for (size_t r = 0; r < n; ++r) {
      CHECK(a[r].logical_id == b[r].logical_id);
      for (size_t i = 0; i < 5; ++i) CHECK(a[r].weight.at(i) == b[r].weight.at(i));
    }
  }
}

TEST_CASE("concurrent rendezvous survives a randomized soak") {
  // Odd and even ring sizes exercise both send/receive orderings.
  for (size_t n : {3u, 4u}) {
    WorkerGroup g(n, TransportKind::Concurrent);
    auto slots = make_slots(n, 3);
    SplitMix64 rng(1234 + n);
    for (int iter = 0; iter < 2000; ++iter) {
      if (rng.next_index(2) == 0)
        g.rotate_clockwise(slots);
      else
        g.rotate_counterclockwise(slots, PayloadKind::Weight);
    }
    std::set<size_t> ids;
    for (const auto& s : slots) ids.insert(s.logical_id);
    CHECK(ids.size() == n);
  }
}
