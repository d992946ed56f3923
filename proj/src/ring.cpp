#include "rtp/ring.hpp"

#include <cassert>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <thread>

#include "rtp/errors.hpp"

namespace rtp {

namespace {

constexpr auto kExchangeTimeout = std::chrono::seconds(10);

size_t cw_dest(size_t r, size_t n) { return (r + 1) % n; }
size_t cw_src(size_t r, size_t n) { return (r + n - 1) % n; }

void verify_tag(const RingPayload& p, uint64_t expected, size_t rank) {
  if (p.tag != expected)
    throw ProtocolError("step tag mismatch at worker " + std::to_string(rank) + ": got " +
                        std::to_string(p.tag) + ", expected " + std::to_string(expected));
}

// Single-threaded deterministic transport: thunks run in rank order on the
// calling thread; an exchange is a direct permutation of the payloads.
class LockstepTransport final : public Transport {
 public:
  explicit LockstepTransport(size_t n) : n_(n) {}
  size_t size() const override { return n_; }

  void each(const std::function<void(size_t)>& fn) override {
    for (size_t r = 0; r < n_; ++r) fn(r);
  }

  std::vector<RingPayload> exchange(std::vector<RingPayload> outgoing, Direction dir,
                                    uint64_t expected_tag) override {
    std::vector<RingPayload> incoming(n_);
    for (size_t r = 0; r < n_; ++r) {
      const size_t dest =
          dir == Direction::Clockwise ? cw_dest(r, n_) : cw_src(r, n_);
      verify_tag(outgoing[r], expected_tag, dest);
      incoming[dest] = std::move(outgoing[r]);
    }
    return incoming;
  }

 private:
  size_t n_;
};

// True rendezvous cell: send blocks until the receiver has taken the value.
class RendezvousSlot {
 public:
  void send(RingPayload p, size_t rank) {
    std::unique_lock lk(m_);
    if (!cv_.wait_for(lk, kExchangeTimeout, [&] { return !item_.has_value(); }))
      timeout(rank, "send (slot occupied)");
    item_ = std::move(p);
    cv_.notify_all();
    if (!cv_.wait_for(lk, kExchangeTimeout, [&] { return !item_.has_value(); }))
      timeout(rank, "send (no receiver)");
  }

  RingPayload recv(size_t rank) {
    std::unique_lock lk(m_);
    if (!cv_.wait_for(lk, kExchangeTimeout, [&] { return item_.has_value(); }))
      timeout(rank, "recv (no sender)");
    RingPayload p = std::move(*item_);
    item_.reset();
    cv_.notify_all();
    return p;
  }

 private:
  [[noreturn]] static void timeout(size_t rank, const char* what) {
    throw ProtocolError("rotation deadlock: worker " + std::to_string(rank) + " timed out on " +
                        what);
  }
  std::mutex m_;
  std::condition_variable cv_;
  std::optional<RingPayload> item_;
};

// One thread per rank with per-rank task dispatch. Exchange ordering:
// even ranks send-then-receive, odd ranks receive-then-send; with N odd,
// rank N-1 receives first. This breaks the wait cycle under rendezvous
// semantics for every N.
class ConcurrentTransport final : public Transport {
 public:
  explicit ConcurrentTransport(size_t n)
      : n_(n), ch_cw_(n), ch_ccw_(n), tasks_(n), errors_(n) {
    threads_.reserve(n_);
    for (size_t r = 0; r < n_; ++r)
      threads_.emplace_back([this, r] { worker_main(r); });
  }

  ~ConcurrentTransport() override {
    {
      std::lock_guard lk(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  size_t size() const override { return n_; }

  void each(const std::function<void(size_t)>& fn) override { dispatch(fn); }

  std::vector<RingPayload> exchange(std::vector<RingPayload> outgoing, Direction dir,
                                    uint64_t expected_tag) override {
    std::vector<RingPayload> incoming(n_);
    dispatch([&](size_t r) {
      const bool send_first = (r % 2 == 0) && !(n_ % 2 == 1 && r == n_ - 1);
      auto& send_ch = dir == Direction::Clockwise ? ch_cw_[r] : ch_ccw_[r];
      auto& recv_ch = dir == Direction::Clockwise ? ch_cw_[cw_src(r, n_)]
                                                  : ch_ccw_[cw_dest(r, n_)];
      if (send_first) {
        send_ch.send(std::move(outgoing[r]), r);
        incoming[r] = recv_ch.recv(r);
      } else {
        incoming[r] = recv_ch.recv(r);
        send_ch.send(std::move(outgoing[r]), r);
      }
      verify_tag(incoming[r], expected_tag, r);
    });
    return incoming;
  }

 private:
  void worker_main(size_t rank) {
    uint64_t seen = 0;
    while (true) {
      std::function<void(size_t)> task;
      {
        std::unique_lock lk(m_);
        cv_.wait(lk, [&] { return stop_ || generation_ > seen; });
        if (stop_) return;
        seen = generation_;
        task = tasks_[rank];
      }
      try {
        task(rank);
      } catch (...) {
        errors_[rank] = std::current_exception();
      }
      {
        std::lock_guard lk(m_);
        if (++done_ == n_) cv_done_.notify_all();
      }
    }
  }

  void dispatch(const std::function<void(size_t)>& fn) {
    {
      std::lock_guard lk(m_);
      for (size_t r = 0; r < n_; ++r) {
        tasks_[r] = fn;
        errors_[r] = nullptr;
      }
      done_ = 0;
      ++generation_;
    }
    cv_.notify_all();
    {
      std::unique_lock lk(m_);
      cv_done_.wait(lk, [&] { return done_ == n_; });
    }
    for (size_t r = 0; r < n_; ++r)
      if (errors_[r]) std::rethrow_exception(errors_[r]);
  }

  size_t n_;
  std::vector<RendezvousSlot> ch_cw_;   // edge r -> r+1
  std::vector<RendezvousSlot> ch_ccw_;  // edge r -> r-1
  std::vector<std::thread> threads_;
  std::mutex m_;
  std::condition_variable cv_, cv_done_;
  std::vector<std::function<void(size_t)>> tasks_;
  std::vector<std::exception_ptr> errors_;
  uint64_t generation_ = 0;
  size_t done_ = 0;
  bool stop_ = false;
};

}  // namespace

WorkerGroup::WorkerGroup(size_t n, TransportKind kind) : n_(n), kind_(kind) {
  if (n == 0) throw ConfigError("worker group needs at least one worker");
  if (kind == TransportKind::Lockstep)
    transport_ = std::make_unique<LockstepTransport>(n);
  else
    transport_ = std::make_unique<ConcurrentTransport>(n);
}

WorkerGroup::~WorkerGroup() = default;

void WorkerGroup::bind_ledgers(std::vector<MemoryLedger*> ledgers) {
  if (!ledgers.empty() && ledgers.size() != n_)
    throw ConfigError("ledger binding size " + std::to_string(ledgers.size()) +
                      " does not match " + std::to_string(n_) + " workers");
  ledgers_ = std::move(ledgers);
}

MemoryLedger* WorkerGroup::ledger_of(size_t rank) const {
  return ledgers_.empty() ? nullptr : ledgers_[rank];
}

void WorkerGroup::each(const std::function<void(size_t)>& fn) {
  if (ledgers_.empty()) {
    transport_->each(fn);
    return;
  }
  transport_->each([&](size_t r) {
    LedgerScope scope(ledgers_[r], MemCategory::Activation);
    fn(r);
  });
}

void WorkerGroup::corrupt_next_exchange(size_t rank, Corrupt what) {
  corrupt_rank_ = rank;
  corrupt_ = what;
}

std::vector<RingPayload> WorkerGroup::run_exchange(std::vector<RingPayload> outgoing,
                                                   Direction dir) {
  const uint64_t tag = tag_++;
  for (auto& p : outgoing) p.tag = tag;
  if (corrupt_ != Corrupt::None) {
    if (corrupt_ == Corrupt::Tag) outgoing[corrupt_rank_].tag ^= 1;
    if (corrupt_ == Corrupt::ShardId) outgoing[corrupt_rank_].logical_id += 1;
    corrupt_ = Corrupt::None;
  }
  return transport_->exchange(std::move(outgoing), dir, tag);
}

void WorkerGroup::record(std::string_view label, const char* kind, size_t w_elems,
                         size_t g_elems) {
  traffic_.push_back({std::string(label), kind, w_elems, g_elems});
}

namespace {

RingPayload make_payload(ShardSlot& slot, PayloadKind kind) {
  RingPayload p;
  p.weight = slot.weight.yield_data();
  if (kind == PayloadKind::WeightAndGrad) p.grad = slot.grad_acc.yield_data();
  p.logical_id = slot.logical_id;
  p.rotation_offset = slot.rotation_offset;
  return p;
}

void install_payload(ShardSlot& slot, RingPayload p, PayloadKind kind, long hop) {
  slot.weight.accept_data(std::move(p.weight));
  if (kind == PayloadKind::WeightAndGrad) slot.grad_acc.accept_data(std::move(p.grad));
  slot.logical_id = p.logical_id;
  slot.rotation_offset = p.rotation_offset + hop;
}

}  // namespace

void WorkerGroup::rotate_clockwise(std::span<ShardSlot> slots, PayloadKind kind,
                                   std::string_view label) {
  if (slots.size() != n_)
    throw ConfigError("rotate: got " + std::to_string(slots.size()) + " slots for " +
                      std::to_string(n_) + " workers");
  const size_t w_elems = slots.empty() ? 0 : slots[0].weight.numel();
  const size_t g_elems = kind == PayloadKind::WeightAndGrad ? slots[0].grad_acc.numel() : 0;
  if (n_ == 1) return;
  std::vector<RingPayload> outgoing(n_);
  each([&](size_t r) { outgoing[r] = make_payload(slots[r], kind); });
  auto incoming = run_exchange(std::move(outgoing), Direction::Clockwise);
  each([&](size_t r) { install_payload(slots[r], std::move(incoming[r]), kind, +1); });
  record(label, "rotation_cw", w_elems, g_elems);
}

void WorkerGroup::rotate_counterclockwise(std::span<ShardSlot> slots, PayloadKind kind,
                                          std::string_view label) {
  if (slots.size() != n_)
    throw ConfigError("rotate: got " + std::to_string(slots.size()) + " slots for " +
                      std::to_string(n_) + " workers");
  const size_t w_elems = slots.empty() ? 0 : slots[0].weight.numel();
  const size_t g_elems = kind == PayloadKind::WeightAndGrad ? slots[0].grad_acc.numel() : 0;
  if (n_ == 1) return;
  std::vector<RingPayload> outgoing(n_);
  each([&](size_t r) { outgoing[r] = make_payload(slots[r], kind); });
  auto incoming = run_exchange(std::move(outgoing), Direction::CounterClockwise);
  each([&](size_t r) { install_payload(slots[r], std::move(incoming[r]), kind, -1); });
  record(label, "rotation_ccw", w_elems, g_elems);
}

void WorkerGroup::rotate_outofplace(std::span<ShardSlot> slots, std::span<Tensor> spares,
                                    Direction dir, PayloadKind kind, std::string_view label) {
  if (slots.size() != n_ || spares.size() != n_)
    throw ConfigError("rotate_outofplace: slot/spare counts do not match worker count");
  each([&](size_t r) {
    if (spares[r].numel() != slots[r].weight.numel())
      throw DimensionError("rotate_outofplace: spare buffer " + spares[r].shape_str() +
                           " does not match shard " + slots[r].weight.shape_str());
  });
  const size_t w_elems = slots[0].weight.numel();
  const size_t g_elems = kind == PayloadKind::WeightAndGrad ? slots[0].grad_acc.numel() : 0;
  if (n_ == 1) return;

  // The outgoing weight is copied so the resident shard stays readable while
  // the receive lands in the spare; the copy is the single in-flight message.
  std::vector<RingPayload> outgoing(n_);
  each([&](size_t r) {
    RingPayload p;
    p.weight.assign(slots[r].weight.data(), slots[r].weight.data() + slots[r].weight.numel());
    if (kind == PayloadKind::WeightAndGrad) p.grad = slots[r].grad_acc.yield_data();
    p.logical_id = slots[r].logical_id;
    p.rotation_offset = slots[r].rotation_offset;
    outgoing[r] = std::move(p);
  });
  auto incoming = run_exchange(std::move(outgoing), dir);
  const long hop = dir == Direction::Clockwise ? +1 : -1;
  each([&](size_t r) {
    RingPayload p = std::move(incoming[r]);
    // Receive into the spare, then swap roles with the resident shard.
    std::vector<double> dropped = spares[r].yield_data();
    (void)dropped;
    spares[r].accept_data(std::move(p.weight));
    swap_data(slots[r].weight, spares[r]);
    if (kind == PayloadKind::WeightAndGrad) slots[r].grad_acc.accept_data(std::move(p.grad));
    slots[r].logical_id = p.logical_id;
    slots[r].rotation_offset = p.rotation_offset + hop;
  });
  record(label, dir == Direction::Clockwise ? "rotation_cw" : "rotation_ccw", w_elems, g_elems);
}

std::vector<Tensor> WorkerGroup::ring_allgather(std::span<const Tensor> shards,
                                                std::string_view label) {
  if (shards.size() != n_)
    throw ConfigError("ring_allgather: got " + std::to_string(shards.size()) + " shards for " +
                      std::to_string(n_) + " workers");
  const size_t chunk = shards[0].numel();
  for (const Tensor& s : shards)
    if (s.numel() != chunk) throw DimensionError("ring_allgather: unequal shard sizes");

  std::vector<Tensor> gathered(n_);
  each([&](size_t r) {
    gathered[r] = Tensor({n_ * chunk});
    std::copy(shards[r].data(), shards[r].data() + chunk, gathered[r].data() + r * chunk);
  });
  if (n_ == 1) return gathered;

  // Each step forwards the chunk received in the previous step.
  std::vector<std::vector<double>> carry(n_);
  each([&](size_t r) { carry[r].assign(shards[r].data(), shards[r].data() + chunk); });
  for (size_t s = 0; s < n_ - 1; ++s) {
    std::vector<RingPayload> outgoing(n_);
    each([&](size_t r) {
      RingPayload p;
      p.weight = std::move(carry[r]);
      p.logical_id = (r + n_ - s) % n_;  // id of the chunk being forwarded
      outgoing[r] = std::move(p);
    });
    auto incoming = run_exchange(std::move(outgoing), Direction::Clockwise);
    each([&](size_t r) {
      const size_t src_id = (r + n_ - s - 1) % n_;
      if (incoming[r].logical_id != src_id)
        throw ProtocolError("allgather: worker " + std::to_string(r) + " received chunk " +
                            std::to_string(incoming[r].logical_id) + ", expected " +
                            std::to_string(src_id));
      std::copy(incoming[r].weight.begin(), incoming[r].weight.end(),
                gathered[r].data() + src_id * chunk);
      carry[r] = std::move(incoming[r].weight);
    });
    record(label, "allgather", chunk, 0);
  }
  return gathered;
}

}  // namespace rtp
