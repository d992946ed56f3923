#include "rtp/ledger.hpp"

#include <cassert>

namespace rtp {

const char* mem_category_name(MemCategory c) {
  switch (c) {
    case MemCategory::Param: return "Param";
    case MemCategory::Grad: return "Grad";
    case MemCategory::Activation: return "Activation";
    case MemCategory::CommBuffer: return "CommBuffer";
    case MemCategory::Other: return "Other";
  }
  return "?";
}

void MemoryLedger::on_alloc(MemCategory c, size_t bytes) {
  current_[idx(c)] += bytes;
  if (current_[idx(c)] > peak_[idx(c)]) peak_[idx(c)] = current_[idx(c)];
  current_total_ += bytes;
  if (current_total_ > peak_total_) peak_total_ = current_total_;
}

void MemoryLedger::on_release(MemCategory c, size_t bytes) {
  assert(current_[idx(c)] >= bytes);
  assert(current_total_ >= bytes);
  current_[idx(c)] -= bytes;
  current_total_ -= bytes;
}

void MemoryLedger::reset() {
  current_.fill(0);
  peak_.fill(0);
  current_total_ = 0;
  peak_total_ = 0;
}

namespace {
thread_local MemoryLedger* t_ledger = nullptr;
thread_local MemCategory t_category = MemCategory::Other;
}  // namespace

LedgerScope::LedgerScope(MemoryLedger* ledger, MemCategory category)
    : prev_ledger_(t_ledger), prev_category_(t_category) {
  t_ledger = ledger;
  t_category = category;
}

LedgerScope::~LedgerScope() {
  t_ledger = prev_ledger_;
  t_category = prev_category_;
}

MemoryLedger* LedgerScope::current_ledger() { return t_ledger; }
MemCategory LedgerScope::current_category() { return t_category; }

}  // namespace rtp
