#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace rtp {

enum class MemCategory : uint8_t { Param, Grad, Activation, CommBuffer, Other };
inline constexpr size_t kNumMemCategories = 5;

const char* mem_category_name(MemCategory c);

// Per-worker byte counters with peak tracking. Every Tensor allocation made
// while a LedgerScope is active is charged to the scope's ledger/category;
// the matching release happens when the tensor dies. peak_total tracks the
// peak of the summed categories, not the sum of per-category peaks.
//
// Raw payload buffers in flight between workers during an exchange are
// deliberately not charged to any ledger: at most one message per worker is
// in flight, and the duplication metric exempts that transient (see README).
class MemoryLedger {
 public:
  void on_alloc(MemCategory c, size_t bytes);
  void on_release(MemCategory c, size_t bytes);

  size_t current(MemCategory c) const { return current_[idx(c)]; }
  size_t peak(MemCategory c) const { return peak_[idx(c)]; }
  size_t current_total() const { return current_total_; }
  size_t peak_total() const { return peak_total_; }

  void reset();

 private:
  static size_t idx(MemCategory c) { return static_cast<size_t>(c); }
  std::array<size_t, kNumMemCategories> current_{};
  std::array<size_t, kNumMemCategories> peak_{};
  size_t current_total_ = 0;
  size_t peak_total_ = 0;
};

// RAII binding of the calling thread's allocations to a ledger + category.
// Scopes nest; each restores the previous binding on destruction.
class LedgerScope {
 public:
  LedgerScope(MemoryLedger* ledger, MemCategory category);
  ~LedgerScope();
  LedgerScope(const LedgerScope&) = delete;
  LedgerScope& operator=(const LedgerScope&) = delete;

  static MemoryLedger* current_ledger();
  static MemCategory current_category();

 private:
  MemoryLedger* prev_ledger_;
  MemCategory prev_category_;
};

// Keeps the thread's ledger but switches the category.
class CategoryScope {
 public:
  explicit CategoryScope(MemCategory category)
      : inner_(LedgerScope::current_ledger(), category) {}

 private:
  LedgerScope inner_;
};

}  // namespace rtp
