#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <span>

#include "rtp/config.hpp"

namespace rtp {

// Exit codes: 0 success, 1 tolerance breach, 2 configuration error (thrown
// as ConfigError and mapped by the caller).

// Pinned verification tolerances.
inline constexpr double kForwardTol = 1e-10;
inline constexpr double kGradTol = 1e-9;
inline constexpr double kFdTol = 1e-6;

// RTP vs serial-oracle equivalence plus a finite-difference spot check.
// inject_shard_fault corrupts one rotation message mid-backward to prove the
// replay assertion trips (expected outcome: FAIL, exit 1).
int cmd_verify(const ExperimentConfig& cfg, std::ostream& report, bool inject_shard_fault = false);

// All seven analytic table rows for the given N. When literals are absent,
// W = parameter count x 8, G = W, and A/A_p come from the analytic estimate.
struct MemTableLiterals {
  uint64_t W, G, A, A_p;
};
int cmd_memtable(const ExperimentConfig& cfg, const std::optional<MemTableLiterals>& literals,
                 std::ostream& csv);

// Instrumented per-worker peaks and duplication against the serial baseline.
int cmd_ledger(const ExperimentConfig& cfg, std::ostream& csv, std::ostream& summary);

// Logical-time schedules for fsdp / rtp-inplace / rtp-outofplace.
int cmd_timeline(const ExperimentConfig& cfg, std::ostream& csv, std::ostream& summary);

// Peak-memory series over per-worker batch sizes.
int cmd_sweep(const ExperimentConfig& cfg, std::span<const size_t> batches_per_worker,
              std::ostream& csv);

}  // namespace rtp
