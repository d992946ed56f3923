#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtp/ledger.hpp"
#include "rtp/tensor.hpp"

namespace rtp {

enum class Direction { Clockwise, CounterClockwise };
enum class TransportKind { Lockstep, Concurrent };
enum class PayloadKind { Weight, WeightAndGrad };

// Per-worker resident buffer: one weight shard, the traveling gradient
// accumulator, and the logical identity of the shard currently held.
// Rotation permutes slot contents across the ring; it never mutates values.
struct ShardSlot {
  Tensor weight;
  Tensor grad_acc;
  size_t logical_id = 0;
  long rotation_offset = 0;  // net clockwise hops taken by this slot
};

// Raw exchange message. Buffers are plain vectors, deliberately outside any
// ledger: at most one message per worker is in flight and the duplication
// metric exempts that transient (see README).
struct RingPayload {
  std::vector<double> weight;
  std::vector<double> grad;  // empty unless PayloadKind::WeightAndGrad
  size_t logical_id = 0;
  long rotation_offset = 0;
  uint64_t tag = 0;
};

struct CommRecord {
  std::string label;
  const char* kind;  // "rotation_cw" | "rotation_ccw" | "allgather"
  size_t weight_elems_per_worker;
  size_t grad_elems_per_worker;
};

// Group-synchronous transport: runs per-worker thunks and performs neighbor
// exchanges where every worker sends exactly one message and receives exactly
// one. The lockstep implementation drives all ranks from the calling thread
// in rank order; the concurrent implementation runs one thread per rank with
// true rendezvous messaging.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual size_t size() const = 0;
  virtual void each(const std::function<void(size_t)>& fn) = 0;
  // Sends outgoing[r] from rank r to its clockwise/counter-clockwise
  // neighbor; returns what each rank received. Verifies that every message
  // carries expected_tag.
  virtual std::vector<RingPayload> exchange(std::vector<RingPayload> outgoing, Direction dir,
                                            uint64_t expected_tag) = 0;
};

class WorkerGroup {
 public:
  WorkerGroup(size_t n, TransportKind kind);
  ~WorkerGroup();

  size_t size() const { return n_; }
  TransportKind kind() const { return kind_; }

  // Optional: per-rank ledgers. each() then wraps thunks in a LedgerScope
  // with category Activation; callers narrow the category where needed.
  void bind_ledgers(std::vector<MemoryLedger*> ledgers);
  MemoryLedger* ledger_of(size_t rank) const;

  // Runs fn(rank) for every rank. Under the concurrent transport the calls
  // run in parallel, one per worker thread; exceptions are re-thrown in rank
  // order.
  void each(const std::function<void(size_t)>& fn);

  // Ring step moving each slot from rank i to (i+1) mod N. In-place: the
  // resident buffer's contents are exchanged directly, no extra allocation.
  void rotate_clockwise(std::span<ShardSlot> slots, PayloadKind kind = PayloadKind::Weight,
                        std::string_view label = {});

  // Inverse step (rank i to (i-1) mod N); weight and gradient accumulator
  // travel together by default.
  void rotate_counterclockwise(std::span<ShardSlot> slots,
                               PayloadKind kind = PayloadKind::WeightAndGrad,
                               std::string_view label = {});

  // Double-buffered variant: the receive lands in the spare buffer while the
  // resident weight stays readable; buffers swap roles on completion. Spares
  // must be shard-sized and ledger-registered as CommBuffer by the caller.
  // Gradients (when carried) are exchanged in place.
  void rotate_outofplace(std::span<ShardSlot> slots, std::span<Tensor> spares, Direction dir,
                         PayloadKind kind = PayloadKind::Weight, std::string_view label = {});

  // Reference collective: every worker ends with all N shards concatenated
  // in canonical order, via N-1 ring forwarding steps.
  std::vector<Tensor> ring_allgather(std::span<const Tensor> shards, std::string_view label = {});

  const std::vector<CommRecord>& traffic() const { return traffic_; }
  void clear_traffic() { traffic_.clear(); }
  uint64_t next_tag() const { return tag_; }

  // Test hooks: corrupts rank's next outgoing message.
  enum class Corrupt { None, Tag, ShardId };
  void corrupt_next_exchange(size_t rank, Corrupt what);

 private:
  std::vector<RingPayload> run_exchange(std::vector<RingPayload> outgoing, Direction dir);
  void record(std::string_view label, const char* kind, size_t w_elems, size_t g_elems);

  size_t n_;
  TransportKind kind_;
  std::unique_ptr<Transport> transport_;
  std::vector<MemoryLedger*> ledgers_;
  std::vector<CommRecord> traffic_;
  uint64_t tag_ = 0;
  size_t corrupt_rank_ = 0;
  Corrupt corrupt_ = Corrupt::None;
};

}  // namespace rtp
