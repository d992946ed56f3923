#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rtp/ledger.hpp"
#include "rtp/ring.hpp"
#include "rtp/serial.hpp"

namespace rtp {

// --- analytic memory table -------------------------------------------------

enum class Strategy {
  NoParallelism,
  TensorParallel,
  DataParallel,
  PipelineParallel,
  Fsdp,
  Rtp,
  RtpInplace,
};

const char* strategy_name(Strategy s);
Strategy strategy_from_string(const std::string& s);

// Whole-system byte totals for one strategy. W/G/A are the weight, gradient
// and activation footprints of the serial workload; A_p the per-stage
// boundary activation of a pipeline; N the worker count.
struct MemoryBreakdown {
  uint64_t activation_mem = 0;
  uint64_t param_mem = 0;
  uint64_t duplication = 0;
};

MemoryBreakdown table1_memory(Strategy s, uint64_t W, uint64_t G, uint64_t A, uint64_t A_p,
                              uint64_t N);

// --- latency/bandwidth/flop cost model --------------------------------------

struct CostModel {
  double alpha = 1e-6;   // seconds per message
  double beta = 1e-10;   // seconds per byte
  double gamma = 1e-11;  // seconds per FLOP
};

// N sub-kernels of shape (B/N, I, O/N) plus per-launch overhead; equals the
// serial GEMM time divided by N when overhead is zero.
double eq1_compute_time(double B, double I, double O, double N, const CostModel& cost,
                        double launch_overhead);

// N-1 neighbor exchanges of M/N bytes each.
double eq2_comm_time(double M_bytes, size_t N, const CostModel& cost);

// --- logical-time schedules --------------------------------------------------

enum class Stream { Compute, Comm };
enum class Schedule { Fsdp, RtpInplace, RtpOutOfPlace };

Schedule schedule_from_string(const std::string& s);
const char* schedule_name(Schedule s);

struct TimelineEvent {
  size_t worker;
  Stream stream;
  std::string label;
  double start;
  double end;
};

struct Timeline {
  size_t n_workers = 1;
  std::vector<TimelineEvent> events;

  double makespan() const;
  // Start time of the worker's first compute event.
  double startup_latency(size_t worker) const;
  double busy_time(size_t worker, Stream stream) const;
  double idle_fraction(size_t worker) const;  // compute-stream idle share
};

struct LayerCost {
  std::string label;
  double flops = 0;  // serial forward FLOPs for the whole batch
  double bytes = 0;  // full parameter message size
};

// Forward-pass schedule shapes: FSDP gathers each unit before computing it
// (one-unit prefetch); RTP in-place strictly alternates compute and rotation;
// RTP out-of-place overlaps rotation s+1 with compute s on separate streams.
Timeline simulate_timeline(Schedule schedule, std::span<const LayerCost> layers, size_t n,
                           const CostModel& cost, double launch_overhead);

// Per-layer cost inputs derived from model shape and global batch size.
std::vector<LayerCost> model_layer_costs(const ModelDims& dims, size_t global_batch);

// --- instrumented runs -------------------------------------------------------

enum class RunStrategy { Serial, RtpInplace, RtpOutOfPlace };
const char* run_strategy_name(RunStrategy s);

struct LedgerRunReport {
  RunStrategy strategy = RunStrategy::Serial;
  size_t n = 1;
  size_t global_batch = 0;
  // Peaks are identical across workers (symmetric workload); keep both the
  // common view and the per-worker detail.
  std::array<size_t, kNumMemCategories> peak{};
  size_t peak_total = 0;
  std::vector<std::array<size_t, kNumMemCategories>> per_worker_peak;
  std::vector<size_t> per_worker_peak_total;
  size_t flat_param_bytes = 0;  // W (padded flat totals; serial: raw params)
  size_t grad_bytes = 0;        // G
  size_t gate_bytes = 0;        // replicated-per-worker extra (MoE)
  bool comm_released_before_final_output = false;
  double loss = 0.0;
};

// One training step (forward, loss, backward) with every tensor allocation
// routed through per-worker ledgers.
LedgerRunReport ledger_instrumented_run(const ModelDims& dims, RunStrategy strategy,
                                        TransportKind kind, size_t n, size_t global_batch,
                                        uint64_t seed);

// duplication = N * per-worker-peak - serial-peak, per category.
int64_t duplication_bytes(const LedgerRunReport& run, const LedgerRunReport& serial_baseline,
                          MemCategory c);

struct SweepPoint {
  size_t batch_per_worker = 0;
  size_t global_batch = 0;
  std::array<size_t, kNumMemCategories> peak{};
  size_t peak_total = 0;
};

// Peak-vs-batch series; the swept value is the per-worker batch, the global
// batch is batch * N.
std::vector<SweepPoint> batch_sweep(const ModelDims& dims, RunStrategy strategy,
                                    TransportKind kind, size_t n,
                                    std::span<const size_t> batches_per_worker, uint64_t seed);

}  // namespace rtp
