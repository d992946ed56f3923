#include "rtp/commands.hpp"

#include <cinttypes>
#include <cstdio>

#include "rtp/verify.hpp"

namespace rtp {

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

constexpr Strategy kAllStrategies[] = {
    Strategy::NoParallelism, Strategy::TensorParallel, Strategy::DataParallel,
    Strategy::PipelineParallel, Strategy::Fsdp, Strategy::Rtp, Strategy::RtpInplace,
};

}  // namespace

int cmd_verify(const ExperimentConfig& cfg, std::ostream& report, bool inject_shard_fault) {
  cfg.validate();
  const ModelDims dims = cfg.model_dims();
  const size_t n = cfg.n_workers;
  const TransportKind kind = cfg.transport_kind();
  const RotationMode mode = cfg.run_strategy() == RunStrategy::RtpOutOfPlace
                                ? RotationMode::OutOfPlace
                                : RotationMode::InPlace;

  report << "verify: n=" << n << " transport=" << cfg.transport << " moe=" << (cfg.moe ? 1 : 0)
         << " batch=" << cfg.batch_size << " seed=" << cfg.seed << "\n";

  if (inject_shard_fault) {
    // Negative test: corrupt one shard identity mid-backward and require the
    // replay assertion to trip.
    try {
      ModelDims d = dims;
      if (d.moe) d.n_experts = n;
      SerialModel serial(d, cfg.seed);
      WorkerGroup group(n, kind);
      RtpModel rtp(serial, group, mode);
      BatchFixture fx = make_batch_fixture(serial.dims(), cfg.batch_size, cfg.seed);
      auto ids_sh = shard_ids(fx, n);
      auto target_sh = shard_rows(fx.target, cfg.batch_size, n);
      auto out = rtp.forward(ids_sh, Mode::Train);
      std::vector<Tensor> dlogits(n);
      for (size_t r = 0; r < n; ++r) dlogits[r] = mse_grad(out[r], target_sh[r], fx.target.numel());
      group.corrupt_next_exchange(0, WorkerGroup::Corrupt::ShardId);
      rtp.backward(dlogits);
      report << "fault injection: no assertion tripped\nresult: FAIL\n";
      return 1;
    } catch (const ProtocolError& e) {
      report << "fault injection tripped as expected: " << e.what() << "\nresult: FAIL\n";
      return 1;
    }
  }

  const EquivalenceReport eq = run_equivalence(dims, n, kind, cfg.batch_size, cfg.seed, mode);
  const bool fwd_ok = eq.max_forward_rel < kForwardTol;
  const bool grad_ok = eq.max_grad_rel < kGradTol;
  report << "forward max rel err: " << fmt_g(eq.max_forward_rel) << " (tol " << fmt_g(kForwardTol)
         << ") " << (fwd_ok ? "PASS" : "FAIL") << "\n";
  report << "grad max rel err: " << fmt_g(eq.max_grad_rel) << " (tol " << fmt_g(kGradTol) << ") "
         << (grad_ok ? "PASS" : "FAIL") << "\n";
  for (const auto& l : eq.per_layer)
    report << "  " << l.layer << ": " << fmt_g(l.max_rel) << "\n";
  report << "loss serial=" << fmt_g(eq.loss_serial) << " rtp=" << fmt_g(eq.loss_rtp) << "\n";

  const FdReport fd = run_fd_check(dims, std::min<size_t>(n, 2), kind,
                                   std::min<size_t>(cfg.batch_size, 2 * std::min<size_t>(n, 2)),
                                   cfg.seed, 48);
  const bool fd_ok = fd.max_rel < kFdTol;
  report << "finite-difference max rel err: " << fmt_g(fd.max_rel) << " over " << fd.samples
         << " samples (tol " << fmt_g(kFdTol) << ") " << (fd_ok ? "PASS" : "FAIL");
  if (!fd.worst_site.empty()) report << " worst at " << fd.worst_site;
  report << "\n";

  const bool ok = fwd_ok && grad_ok && fd_ok;
  report << "result: " << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

int cmd_memtable(const ExperimentConfig& cfg, const std::optional<MemTableLiterals>& literals,
                 std::ostream& csv) {
  uint64_t W, G, A, Ap;
  if (literals) {
    W = literals->W;
    G = literals->G;
    A = literals->A;
    Ap = literals->A_p;
  } else {
    cfg.validate();
    const ModelDims dims = cfg.model_dims();
    W = model_param_count(dims) * sizeof(double);
    G = W;
    A = estimate_activation_bytes(dims, cfg.batch_size);
    Ap = estimate_boundary_activation_bytes(dims, cfg.batch_size);
  }
  csv << "strategy,n,activation_mem,param_mem,duplication\n";
  for (Strategy s : kAllStrategies) {
    const MemoryBreakdown row = table1_memory(s, W, G, A, Ap, cfg.n_workers);
    csv << strategy_name(s) << ',' << cfg.n_workers << ',' << row.activation_mem << ','
        << row.param_mem << ',' << row.duplication << "\n";
  }
  return 0;
}

int cmd_ledger(const ExperimentConfig& cfg, std::ostream& csv, std::ostream& summary) {
  cfg.validate();
  const ModelDims dims = cfg.model_dims();
  const LedgerRunReport serial = ledger_instrumented_run(dims, RunStrategy::Serial,
                                                         cfg.transport_kind(), cfg.n_workers,
                                                         cfg.batch_size, cfg.seed);
  std::vector<LedgerRunReport> runs{serial};
  if (cfg.run_strategy() != RunStrategy::Serial)
    runs.push_back(ledger_instrumented_run(dims, cfg.run_strategy(), cfg.transport_kind(),
                                           cfg.n_workers, cfg.batch_size, cfg.seed));

  csv << "strategy,n,category,peak_bytes,duplication\n";
  for (const auto& run : runs) {
    for (size_t c = 0; c < kNumMemCategories; ++c) {
      const MemCategory cat = static_cast<MemCategory>(c);
      csv << run_strategy_name(run.strategy) << ',' << run.n << ',' << mem_category_name(cat)
          << ',' << run.peak[c] << ',' << duplication_bytes(run, serial, cat) << "\n";
    }
  }

  for (const auto& run : runs) {
    summary << run_strategy_name(run.strategy) << ": n=" << run.n
            << " param+grad peak/worker="
            << run.peak[size_t(MemCategory::Param)] + run.peak[size_t(MemCategory::Grad)]
            << " comm peak/worker=" << run.peak[size_t(MemCategory::CommBuffer)]
            << " total peak/worker=" << run.peak_total << " loss=" << fmt_g(run.loss) << "\n";
    if (run.strategy == RunStrategy::RtpOutOfPlace)
      summary << "  comm buffers released before final-step outputs: "
              << (run.comm_released_before_final_output ? "yes" : "NO") << "\n";
  }
  return 0;
}

int cmd_timeline(const ExperimentConfig& cfg, std::ostream& csv, std::ostream& summary) {
  cfg.validate();
  const ModelDims dims = cfg.model_dims();
  const std::vector<LayerCost> layers = model_layer_costs(dims, cfg.batch_size);
  const CostModel cost = cfg.cost_model();

  csv << "schedule,worker,stream,label,start,end\n";
  for (Schedule s : {Schedule::Fsdp, Schedule::RtpInplace, Schedule::RtpOutOfPlace}) {
    const Timeline tl = simulate_timeline(s, layers, cfg.n_workers, cost, cfg.launch_overhead);
    for (const auto& e : tl.events)
      csv << schedule_name(s) << ',' << e.worker << ','
          << (e.stream == Stream::Compute ? "compute" : "comm") << ',' << e.label << ','
          << fmt_g(e.start) << ',' << fmt_g(e.end) << "\n";
    summary << schedule_name(s) << ": makespan=" << fmt_g(tl.makespan())
            << " startup=" << fmt_g(tl.startup_latency(0))
            << " idle_fraction=" << fmt_g(tl.idle_fraction(0)) << "\n";
  }
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, std::span<const size_t> batches_per_worker,
              std::ostream& csv) {
  cfg.validate();
  const ModelDims dims = cfg.model_dims();
  csv << "strategy,n,batch_per_worker,global_batch,param_peak,grad_peak,activation_peak,"
         "commbuffer_peak,other_peak,total_peak\n";
  const auto points = batch_sweep(dims, cfg.run_strategy(), cfg.transport_kind(), cfg.n_workers,
                                  batches_per_worker, cfg.seed);
  for (const auto& p : points) {
    csv << cfg.strategy << ',' << cfg.n_workers << ',' << p.batch_per_worker << ','
        << p.global_batch << ',' << p.peak[size_t(MemCategory::Param)] << ','
        << p.peak[size_t(MemCategory::Grad)] << ',' << p.peak[size_t(MemCategory::Activation)]
        << ',' << p.peak[size_t(MemCategory::CommBuffer)] << ','
        << p.peak[size_t(MemCategory::Other)] << ',' << p.peak_total << "\n";
  }
  return 0;
}

}  // namespace rtp
