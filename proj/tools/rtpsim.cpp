#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rtp/commands.hpp"
#include "rtp/errors.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<size_t> workers;
  std::optional<std::string> strategy;
  std::optional<size_t> batch;
  std::optional<uint64_t> seed;
  std::optional<std::string> transport;
  std::string out_path;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--workers", f.workers, "worker count N");
  cmd->add_option("--strategy", f.strategy, "serial | rtp-inplace | rtp-outofplace");
  cmd->add_option("--batch", f.batch, "global batch size");
  cmd->add_option("--seed", f.seed, "RNG seed (fallback: RTP_SIM_SEED)");
  cmd->add_option("--transport", f.transport, "lockstep | concurrent");
  cmd->add_option("--out", f.out_path, "output file (default: stdout)");
}

rtp::ExperimentConfig resolve_config(const CommonFlags& f) {
  rtp::ExperimentConfig cfg = rtp::ExperimentConfig::defaults();
  if (!f.config_path.empty()) cfg.merge_json_file(f.config_path);
  if (f.workers) cfg.n_workers = *f.workers;
  if (f.strategy) cfg.strategy = *f.strategy;
  if (f.batch) cfg.batch_size = *f.batch;
  if (f.seed) cfg.seed = *f.seed;
  if (f.transport) cfg.transport = *f.transport;
  return cfg;
}

// Writes to --out if given, else stdout; buffered so the bytes land in one
// piece.
int with_output(const std::string& path, const std::function<int(std::ostream&)>& fn) {
  std::ostringstream buf;
  const int rc = fn(buf);
  if (path.empty()) {
    std::cout << buf.str();
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw rtp::ConfigError("cannot open output file '" + path + "'");
    out << buf.str();
  }
  return rc;
}

std::vector<size_t> parse_batches(const std::string& spec) {
  std::vector<size_t> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      const long v = std::stol(item);
      if (v <= 0) throw std::invalid_argument("non-positive");
      out.push_back(static_cast<size_t>(v));
    } catch (const std::exception&) {
      throw rtp::ConfigError("invalid batch list entry '" + item + "' (expected positive ints)");
    }
  }
  if (out.empty()) throw rtp::ConfigError("batch list is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rotated-tensor-parallelism simulator"};
  app.require_subcommand(1);

  CommonFlags verify_f, memtable_f, ledger_f, timeline_f, sweep_f;
  bool inject_fault = false;
  std::optional<uint64_t> lit_w, lit_g, lit_a, lit_ap;
  std::string batches_spec = "1,2,4,8";

  CLI::App* verify = app.add_subcommand("verify", "oracle equivalence and gradient checks");
  add_common(verify, verify_f);
  verify->add_flag("--inject-shard-fault", inject_fault,
                   "test hook: corrupt one rotation message and expect the replay assertion");

  CLI::App* memtable = app.add_subcommand("memtable", "analytic memory table (all strategies)");
  add_common(memtable, memtable_f);
  memtable->add_option("--W", lit_w, "weight bytes literal");
  memtable->add_option("--G", lit_g, "gradient bytes literal");
  memtable->add_option("--A", lit_a, "activation bytes literal");
  memtable->add_option("--Ap", lit_ap, "pipeline boundary activation bytes literal");

  CLI::App* ledger = app.add_subcommand("ledger", "instrumented per-worker memory peaks");
  add_common(ledger, ledger_f);

  CLI::App* timeline = app.add_subcommand("timeline", "logical-time schedules");
  add_common(timeline, timeline_f);

  CLI::App* sweep = app.add_subcommand("sweep", "peak memory vs per-worker batch");
  add_common(sweep, sweep_f);
  sweep->add_option("--batches", batches_spec, "comma-separated per-worker batch sizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (verify->parsed()) {
      const auto cfg = resolve_config(verify_f);
      return with_output(verify_f.out_path,
                         [&](std::ostream& os) { return rtp::cmd_verify(cfg, os, inject_fault); });
    }
    if (memtable->parsed()) {
      const auto cfg = resolve_config(memtable_f);
      std::optional<rtp::MemTableLiterals> lits;
      const int given = int(bool(lit_w)) + int(bool(lit_g)) + int(bool(lit_a)) + int(bool(lit_ap));
      if (given == 4)
        lits = rtp::MemTableLiterals{*lit_w, *lit_g, *lit_a, *lit_ap};
      else if (given != 0)
        throw rtp::ConfigError("provide all of --W --G --A --Ap or none");
      return with_output(memtable_f.out_path,
                         [&](std::ostream& os) { return rtp::cmd_memtable(cfg, lits, os); });
    }
    if (ledger->parsed()) {
      const auto cfg = resolve_config(ledger_f);
      return with_output(ledger_f.out_path,
                         [&](std::ostream& os) { return rtp::cmd_ledger(cfg, os, std::cerr); });
    }
    if (timeline->parsed()) {
      const auto cfg = resolve_config(timeline_f);
      return with_output(timeline_f.out_path,
                         [&](std::ostream& os) { return rtp::cmd_timeline(cfg, os, std::cerr); });
    }
    if (sweep->parsed()) {
      const auto cfg = resolve_config(sweep_f);
      const auto batches = parse_batches(batches_spec);
      return with_output(sweep_f.out_path,
                         [&](std::ostream& os) { return rtp::cmd_sweep(cfg, batches, os); });
    }
  } catch (const rtp::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
