#include "rtp/analysis.hpp"

#include <algorithm>
#include <cassert>

#include "rtp/errors.hpp"
#include "rtp/model.hpp"

namespace rtp {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::NoParallelism: return "no-parallelism";
    case Strategy::TensorParallel: return "tensor-parallel";
    case Strategy::DataParallel: return "data-parallel";
    case Strategy::PipelineParallel: return "pipeline-parallel";
    case Strategy::Fsdp: return "fsdp";
    case Strategy::Rtp: return "rtp";
    case Strategy::RtpInplace: return "rtp-inplace";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy st : {Strategy::NoParallelism, Strategy::TensorParallel, Strategy::DataParallel,
                      Strategy::PipelineParallel, Strategy::Fsdp, Strategy::Rtp,
                      Strategy::RtpInplace})
    if (s == strategy_name(st)) return st;
  throw ConfigError("unknown strategy '" + s + "'");
}

MemoryBreakdown table1_memory(Strategy s, uint64_t W, uint64_t G, uint64_t A, uint64_t A_p,
                              uint64_t N) {
  if (N == 0) throw ConfigError("table1_memory: N must be >= 1");
  // A single worker is the serial machine for every strategy: no gathers, no
  // rotations, no stage boundaries, hence no duplication.
  if (N == 1) return {A, W + G, 0};
  const uint64_t mx = std::max(W, G);
  switch (s) {
    case Strategy::NoParallelism: return {A, W + G, 0};
    case Strategy::TensorParallel: return {A * N, W + G, A * (N - 1)};
    case Strategy::DataParallel: return {A, (W + G) * N, (W + G) * (N - 1)};
    case Strategy::PipelineParallel: return {A + A_p * N, W + G, A_p * N};
    case Strategy::Fsdp: return {A, W + G + mx * (N - 1), mx * (N - 1)};
    case Strategy::Rtp: return {A, W + G + mx, mx};
    case Strategy::RtpInplace: return {A, W + G, 0};
  }
  throw ConfigError("table1_memory: unknown strategy");
}

double eq1_compute_time(double B, double I, double O, double N, const CostModel& cost,
                        double launch_overhead) {
  const double kernel_flops = 2.0 * (B / N) * I * (O / N);
  return N * (cost.gamma * kernel_flops + launch_overhead);
}

double eq2_comm_time(double M_bytes, size_t N, const CostModel& cost) {
  if (N <= 1) return 0.0;
  return static_cast<double>(N - 1) * (cost.alpha + cost.beta * M_bytes / static_cast<double>(N));
}

const char* schedule_name(Schedule s) {
  switch (s) {
    case Schedule::Fsdp: return "fsdp";
    case Schedule::RtpInplace: return "rtp-inplace";
    case Schedule::RtpOutOfPlace: return "rtp-outofplace";
  }
  return "?";
}

Schedule schedule_from_string(const std::string& s) {
  for (Schedule sc : {Schedule::Fsdp, Schedule::RtpInplace, Schedule::RtpOutOfPlace})
    if (s == schedule_name(sc)) return sc;
  throw ConfigError("unknown schedule '" + s + "'");
}

double Timeline::makespan() const {
  double end = 0.0;
  for (const auto& e : events) end = std::max(end, e.end);
  return end;
}

double Timeline::startup_latency(size_t worker) const {
  double first = -1.0;
  for (const auto& e : events)
    if (e.worker == worker && e.stream == Stream::Compute)
      first = first < 0 ? e.start : std::min(first, e.start);
  return first < 0 ? 0.0 : first;
}

double Timeline::busy_time(size_t worker, Stream stream) const {
  double busy = 0.0;
  for (const auto& e : events)
    if (e.worker == worker && e.stream == stream) busy += e.end - e.start;
  return busy;
}

double Timeline::idle_fraction(size_t worker) const {
  const double span = makespan();
  if (span <= 0.0) return 0.0;
  return (span - busy_time(worker, Stream::Compute)) / span;
}

namespace {

// Worker 0's schedule replicated to all ranks: the ring is symmetric, so
// every worker sees identical timing and paired rotations share intervals.
void replicate_events(Timeline& tl, const std::vector<TimelineEvent>& proto, size_t n) {
  for (size_t w = 0; w < n; ++w)
    for (const auto& e : proto) tl.events.push_back({w, e.stream, e.label, e.start, e.end});
}

}  // namespace

Timeline simulate_timeline(Schedule schedule, std::span<const LayerCost> layers, size_t n,
                           const CostModel& cost, double launch_overhead) {
  Timeline tl;
  tl.n_workers = n;
  std::vector<TimelineEvent> proto;
  const double dn = static_cast<double>(n);

  switch (schedule) {
    case Schedule::Fsdp: {
      // Unit u's gather must finish before its compute; the next gather
      // overlaps the current compute (one-unit prefetch window).
      std::vector<double> ag_end(layers.size(), 0.0);
      std::vector<double> comp_end(layers.size(), 0.0);
      double comm_free = 0.0, comp_free = 0.0;
      for (size_t u = 0; u < layers.size(); ++u) {
        const double t_ag = eq2_comm_time(layers[u].bytes, n, cost);
        const double t_c = cost.gamma * layers[u].flops / dn + launch_overhead;
        double ag_start = comm_free;
        if (u >= 2) ag_start = std::max(ag_start, comp_end[u - 2]);
        if (n > 1) {
          proto.push_back({0, Stream::Comm, "allgather/" + layers[u].label, ag_start,
                           ag_start + t_ag});
          comm_free = ag_start + t_ag;
        }
        const double c_start = std::max(n > 1 ? comm_free : 0.0, comp_free);
        proto.push_back({0, Stream::Compute, "compute/" + layers[u].label, c_start, c_start + t_c});
        ag_end[u] = comm_free;
        comp_end[u] = c_start + t_c;
        comp_free = comp_end[u];
      }
      break;
    }
    case Schedule::RtpInplace: {
      // One stream: compute and rotation strictly alternate.
      double t = 0.0;
      for (const auto& layer : layers) {
        const double t_c = cost.gamma * layer.flops / (dn * dn) + launch_overhead;
        const double t_r = cost.alpha + cost.beta * layer.bytes / dn;
        for (size_t s = 0; s < n; ++s) {
          proto.push_back({0, Stream::Compute,
                           "compute/" + layer.label + "#" + std::to_string(s), t, t + t_c});
          t += t_c;
          if (s + 1 < n) {
            proto.push_back({0, Stream::Comm,
                             "rotate/" + layer.label + "#" + std::to_string(s), t, t + t_r});
            t += t_r;
          }
        }
      }
      break;
    }
    case Schedule::RtpOutOfPlace: {
      // Rotation s (delivering the shard for compute s+1) overlaps compute s.
      double comp_free = 0.0, comm_free = 0.0;
      for (const auto& layer : layers) {
        const double t_c = cost.gamma * layer.flops / (dn * dn) + launch_overhead;
        const double t_r = cost.alpha + cost.beta * layer.bytes / dn;
        std::vector<double> comp_end(n, 0.0), rot_end(n, 0.0);
        for (size_t s = 0; s < n; ++s) {
          double c_start = comp_free;
          if (s > 0) c_start = std::max(c_start, rot_end[s - 1]);
          proto.push_back({0, Stream::Compute,
                           "compute/" + layer.label + "#" + std::to_string(s), c_start,
                           c_start + t_c});
          comp_end[s] = c_start + t_c;
          comp_free = comp_end[s];
          if (s + 1 < n) {
            // The spare buffer for rotation s frees when compute s-1 retires.
            double r_start = std::max(comm_free, s == 0 ? c_start : comp_end[s - 1]);
            if (s > 0) r_start = std::max(r_start, rot_end[s - 1]);
            proto.push_back({0, Stream::Comm,
                             "rotate/" + layer.label + "#" + std::to_string(s), r_start,
                             r_start + t_r});
            rot_end[s] = r_start + t_r;
            comm_free = rot_end[s];
          }
        }
      }
      break;
    }
  }
  replicate_events(tl, proto, n);
  return tl;
}

std::vector<LayerCost> model_layer_costs(const ModelDims& dims, size_t global_batch) {
  const double T = static_cast<double>(global_batch * dims.seq);
  const double H = static_cast<double>(dims.hidden);
  const double F = static_cast<double>(dims.ffn);
  const double V = static_cast<double>(dims.vocab);
  const double S = static_cast<double>(dims.seq);
  const double E = static_cast<double>(dims.moe ? dims.n_experts : 1);

  std::vector<LayerCost> costs;
  costs.push_back({"embedding", 0.0, V * H * 8.0});
  for (size_t l = 0; l < dims.layers; ++l) {
    const std::string tag = "block" + std::to_string(l);
    const double attn_flops = 4.0 * 2.0 * T * H * H + 2.0 * 2.0 * T * S * H;
    costs.push_back({tag + "/attn", attn_flops, 4.0 * H * H * 8.0});
    if (dims.moe) {
      const double moe_flops = 2.0 * T * H * E + 2.0 * 2.0 * T * H * F;
      const double expert_bytes = (H * F + F + F * H + H) * 8.0;
      costs.push_back({tag + "/moe", moe_flops, E * expert_bytes});
    } else {
      costs.push_back({tag + "/ffn1", 2.0 * T * H * F, (H * F + F) * 8.0});
      costs.push_back({tag + "/ffn2", 2.0 * T * F * H, (F * H + H) * 8.0});
    }
  }
  costs.push_back({"head", 2.0 * T * H * V, (H * V + V) * 8.0});
  return costs;
}

const char* run_strategy_name(RunStrategy s) {
  switch (s) {
    case RunStrategy::Serial: return "serial";
    case RunStrategy::RtpInplace: return "rtp-inplace";
    case RunStrategy::RtpOutOfPlace: return "rtp-outofplace";
  }
  return "?";
}

LedgerRunReport ledger_instrumented_run(const ModelDims& dims, RunStrategy strategy,
                                        TransportKind kind, size_t n, size_t global_batch,
                                        uint64_t seed) {
  LedgerRunReport report;
  report.strategy = strategy;
  report.global_batch = global_batch;

  ModelDims d = dims;
  if (d.moe) d.n_experts = strategy == RunStrategy::Serial ? std::max<size_t>(d.n_experts, 1) : n;

  if (strategy == RunStrategy::Serial) {
    report.n = 1;
    MemoryLedger ledger;
    BatchFixture fx;
    {
      LedgerScope scope(&ledger, MemCategory::Other);
      fx = make_batch_fixture(d, global_batch, seed);
    }
    LedgerScope scope(&ledger, MemCategory::Activation);
    SerialModel model(d, seed);  // params/grads categorized internally
    Tensor logits = model.forward(fx.ids, Mode::Train);
    Tensor dlogits = mse_grad(logits, fx.target, fx.target.numel());
    report.loss = squared_error_sum(logits, fx.target) / fx.target.numel();
    model.backward(dlogits);

    report.flat_param_bytes = model.param_bytes();
    report.grad_bytes = model.param_bytes();
    for (size_t c = 0; c < kNumMemCategories; ++c)
      report.peak[c] = ledger.peak(static_cast<MemCategory>(c));
    report.peak_total = ledger.peak_total();
    report.per_worker_peak.push_back(report.peak);
    report.per_worker_peak_total.push_back(report.peak_total);
    return report;
  }

  report.n = n;
  // The serial twin only donates parameter values; keep it off the books.
  SerialModel twin(d, seed);
  BatchFixture fx = make_batch_fixture(d, global_batch, seed);

  std::vector<MemoryLedger> ledgers(n);
  std::vector<MemoryLedger*> ledger_ptrs(n);
  for (size_t r = 0; r < n; ++r) ledger_ptrs[r] = &ledgers[r];

  WorkerGroup group(n, kind);
  group.bind_ledgers(ledger_ptrs);
  RtpModel model(twin, group,
                 strategy == RunStrategy::RtpOutOfPlace ? RotationMode::OutOfPlace
                                                        : RotationMode::InPlace);

  auto ids_sh = shard_ids(fx, n);
  std::vector<Tensor> targets(n);
  {
    auto target_rows = shard_rows(fx.target, global_batch, n);
    group.each([&](size_t r) {
      CategoryScope other_scope(MemCategory::Other);
      targets[r] = target_rows[r];  // copy charges the worker's ledger
    });
  }

  bool comm_ok = false;
  model.on_comm_release = [&] {
    bool all_zero = true;
    for (auto& l : ledgers) all_zero = all_zero && l.current(MemCategory::CommBuffer) == 0;
    comm_ok = all_zero;
  };

  model.begin_step();
  std::vector<Tensor> logits = model.forward(ids_sh, Mode::Train);
  std::vector<Tensor> dlogits(n);
  double sq = 0.0;
  group.each([&](size_t r) { dlogits[r] = mse_grad(logits[r], targets[r], fx.target.numel()); });
  for (size_t r = 0; r < n; ++r) sq += squared_error_sum(logits[r], targets[r]);
  report.loss = sq / fx.target.numel();
  model.backward(dlogits);

  report.comm_released_before_final_output =
      strategy == RunStrategy::RtpOutOfPlace ? comm_ok : true;
  report.flat_param_bytes = model.flat_param_bytes();
  report.grad_bytes = model.flat_param_bytes();
  report.gate_bytes = model.gate_bytes();

  for (size_t r = 0; r < n; ++r) {
    std::array<size_t, kNumMemCategories> peaks{};
    for (size_t c = 0; c < kNumMemCategories; ++c)
      peaks[c] = ledgers[r].peak(static_cast<MemCategory>(c));
    report.per_worker_peak.push_back(peaks);
    report.per_worker_peak_total.push_back(ledgers[r].peak_total());
  }
  for (size_t c = 0; c < kNumMemCategories; ++c) {
    size_t mx = 0;
    for (size_t r = 0; r < n; ++r) mx = std::max(mx, report.per_worker_peak[r][c]);
    report.peak[c] = mx;
  }
  report.peak_total =
      *std::max_element(report.per_worker_peak_total.begin(), report.per_worker_peak_total.end());
  return report;
}

int64_t duplication_bytes(const LedgerRunReport& run, const LedgerRunReport& serial_baseline,
                          MemCategory c) {
  const size_t idx = static_cast<size_t>(c);
  return static_cast<int64_t>(run.n) * static_cast<int64_t>(run.peak[idx]) -
         static_cast<int64_t>(serial_baseline.peak[idx]);
}

std::vector<SweepPoint> batch_sweep(const ModelDims& dims, RunStrategy strategy,
                                    TransportKind kind, size_t n,
                                    std::span<const size_t> batches_per_worker, uint64_t seed) {
  std::vector<SweepPoint> points;
  for (size_t b : batches_per_worker) {
    const size_t workers = strategy == RunStrategy::Serial ? 1 : n;
    const size_t global = b * workers;
    LedgerRunReport run = ledger_instrumented_run(dims, strategy, kind, n, global, seed);
    SweepPoint p;
    p.batch_per_worker = b;
    p.global_batch = global;
    p.peak = run.peak;
    p.peak_total = run.peak_total;
    points.push_back(p);
  }
  return points;
}

}  // namespace rtp
